//! Optimizers over a model's free parameters: Levenberg-Marquardt,
//! differential evolution with optional LM polishing, covariance-based error
//! estimates, an interruptible background controller and a JSON parameter
//! snapshot format.

mod controller;
mod de;
mod errors;
mod lm;
mod problem;
mod snapshot;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{ExprError, Parameter};
use crate::model::{ModelError, Objective};

pub use controller::{FitEvent, FitHandle, Subscription};
pub use de::{fit_de, fit_de_with};
pub use errors::{estimate_errors, ErrorEstimate};
pub use lm::{fit_lm, fit_lm_with};
pub use snapshot::{FitMeta, ParamRecord, Snapshot, SnapshotError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("no free parameters")]
    NoFreeParameters,
    #[error("parameter `{0}` needs finite bounds for differential evolution")]
    Unbounded(String),
    #[error("population size {0} is too small (minimum 4)")]
    PopulationTooSmall(usize),
    #[error("invalid fit options: {0}")]
    InvalidOptions(String),
    #[error("a fit is already running on parameter `{0}`")]
    Busy(String),
    #[error("fit thread panicked")]
    Panicked,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitStatus {
    Converged,
    MaxIter,
    Interrupted,
    Failed,
}

impl FitStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FitStatus::Converged => "converged",
            FitStatus::MaxIter => "max-iter",
            FitStatus::Interrupted => "interrupted",
            FitStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmOptions {
    pub max_iter: usize,
    pub gradient_tol: f64,
    pub step_tol: f64,
    pub lambda_init: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Use the models' residual scaling (false forces linear residuals).
    pub scaled: bool,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iter: 200,
            gradient_tol: 1e-10,
            step_tol: 1e-12,
            lambda_init: 1e-3,
            lambda_up: 10.0,
            lambda_down: 10.0,
            scaled: true,
        }
    }
}

impl LmOptions {
    pub fn validate(&self) -> Result<(), FitError> {
        if !(self.lambda_init > 0.0 && self.lambda_up > 1.0 && self.lambda_down > 1.0) {
            return Err(FitError::InvalidOptions(
                "lambda_init must be positive and lambda_up, lambda_down greater than 1".into(),
            ));
        }
        if !(self.gradient_tol >= 0.0 && self.step_tol >= 0.0) {
            return Err(FitError::InvalidOptions("tolerances must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeOptions {
    pub population_size: usize,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "Cr")]
    pub cr: f64,
    pub max_generations: usize,
    pub candidate_polish_iters: usize,
    pub final_polish_iters: usize,
    pub seed: u64,
    /// Stop once the population's cost spread (standard deviation) is at most
    /// `atol + tol * |mean cost|`; `tol = 0` and `atol = 0` disable this.
    pub tol: f64,
    pub atol: f64,
    pub scaled: bool,
}

impl Default for DeOptions {
    fn default() -> Self {
        DeOptions {
            population_size: 40,
            f: 0.8,
            cr: 0.9,
            max_generations: 200,
            candidate_polish_iters: 0,
            final_polish_iters: 50,
            seed: 0,
            tol: 0.0,
            atol: 0.0,
            scaled: true,
        }
    }
}

impl DeOptions {
    pub fn validate(&self) -> Result<(), FitError> {
        if self.population_size < 4 {
            return Err(FitError::PopulationTooSmall(self.population_size));
        }
        if !(self.f > 0.0) {
            return Err(FitError::InvalidOptions(format!("F must be positive, got {}", self.f)));
        }
        if !(0.0..=1.0).contains(&self.cr) {
            return Err(FitError::InvalidOptions(format!("Cr must be in [0, 1], got {}", self.cr)));
        }
        if !(self.tol >= 0.0 && self.atol >= 0.0) {
            return Err(FitError::InvalidOptions("tolerances must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Optimizer {
    Lm(LmOptions),
    De(DeOptions),
}

/// Fitted value of one pool parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub name: String,
    pub raw_value: f64,
    pub value: f64,
    /// Standard error of the raw value; `None` if not identifiable.
    pub error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub parameters: Vec<ParamEstimate>,
    /// Reduced χ² at the best point.
    pub chi2: f64,
    /// Reduced χ² at the start and after every accepted step (LM) or
    /// generation (DE), then any polishing steps.
    pub chi2_history: Vec<f64>,
    pub status: FitStatus,
    pub n_evaluations: usize,
    pub iterations: usize,
}

/// One progress report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub iteration: usize,
    pub chi2: f64,
    pub elapsed: f64,
    pub parameters: Vec<(String, f64)>,
}

type Sink = Arc<dyn Fn(&Progress) + Send + Sync>;

/// Interrupt flag and progress sink shared between an optimizer and its
/// observers.
#[derive(Clone, Default)]
pub struct Control {
    interrupt: Arc<AtomicBool>,
    sink: Option<Sink>,
}

impl std::fmt::Debug for Control {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Control")
            .field("interrupted", &self.is_interrupted())
            .finish()
    }
}

impl Control {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_sink(sink: impl Fn(&Progress) + Send + Sync + 'static) -> Self {
        Control {
            interrupt: Arc::new(AtomicBool::new(false)),
            sink: Some(Arc::new(sink)),
        }
    }

    pub fn interrupt(&self) {
        self.interrupt.store(true, Ordering::SeqCst);
    }

    pub fn is_interrupted(&self) -> bool {
        self.interrupt.load(Ordering::SeqCst)
    }

    pub(crate) fn emit(&self, p: Progress) {
        if let Some(s) = &self.sink {
            s(&p);
        }
    }
}

pub(crate) struct Reporter<'a> {
    control: &'a Control,
    names: Vec<String>,
    scales: Vec<f64>,
    start: Instant,
    history: Vec<f64>,
    // iteration counter continues across DE generations and polishing
    iteration: usize,
}

impl<'a> Reporter<'a> {
    pub(crate) fn new(control: &'a Control, params: &[Parameter]) -> Self {
        Reporter {
            control,
            names: params.iter().map(Parameter::name).collect(),
            scales: params.iter().map(Parameter::scale).collect(),
            start: Instant::now(),
            history: Vec::new(),
            iteration: 0,
        }
    }

    pub(crate) fn record(&mut self, chi2: f64, raw: &[f64]) {
        self.history.push(chi2);
        self.control.emit(Progress {
            iteration: self.iteration,
            chi2,
            elapsed: self.start.elapsed().as_secs_f64(),
            parameters: self
                .names
                .iter()
                .zip(raw.iter().zip(&self.scales))
                .map(|(n, (r, s))| (n.clone(), r * s))
                .collect(),
        });
        self.iteration += 1;
    }

    pub(crate) fn interrupted(&self) -> bool {
        self.control.is_interrupted()
    }

    pub(crate) fn into_history(self) -> Vec<f64> {
        self.history
    }
}

/// Checks the options and the preconditions that `run` would otherwise
/// report only once started.
pub fn check<O: Objective + ?Sized>(target: &O, optimizer: &Optimizer) -> Result<(), FitError> {
    let params = target.parameters();
    if params.is_empty() {
        return Err(FitError::NoFreeParameters);
    }
    target.degrees_of_freedom()?;
    match optimizer {
        Optimizer::Lm(o) => o.validate(),
        Optimizer::De(o) => {
            o.validate()?;
            match params.iter().find(|p| p.bounds().is_none()) {
                Some(p) => Err(FitError::Unbounded(p.name())),
                None => Ok(()),
            }
        }
    }
}

/// Runs the chosen optimizer.
pub fn run<O: Objective + ?Sized>(target: &O, optimizer: &Optimizer, control: &Control) -> Result<FitResult, FitError> {
    match optimizer {
        Optimizer::Lm(o) => fit_lm_with(target, o, control),
        Optimizer::De(o) => fit_de_with(target, o, control),
    }
}

pub(crate) fn finish<O: Objective + ?Sized>(
    target: &O,
    params: &[Parameter],
    raw: &[f64],
    chi2: f64,
    history: Vec<f64>,
    status: FitStatus,
    n_evaluations: usize,
    iterations: usize,
) -> Result<FitResult, FitError> {
    for (p, &x) in params.iter().zip(raw) {
        p.set_raw_value(x)?;
    }
    let errs = estimate_errors(target).ok();
    let parameters = params
        .iter()
        .enumerate()
        .map(|(i, p)| ParamEstimate {
            name: p.name(),
            raw_value: p.raw_value(),
            value: p.value(),
            error: errs.as_ref().and_then(|e| e[i].value()),
        })
        .collect();
    Ok(FitResult {
        parameters,
        chi2,
        chi2_history: history,
        status,
        n_evaluations,
        iterations,
    })
}
