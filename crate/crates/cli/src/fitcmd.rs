use std::path::PathBuf;

use scatterfit::fit::{self, Control, DeOptions, FitError, FitResult, FitStatus, LmOptions, Optimizer, ParamRecord, Snapshot};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::modelfile::Workspace;

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    /// `lm` or `de`; defaults to the model file's `fit` section, then LM.
    pub method: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Writes the model file with fitted values here; the input is never
    /// touched.
    pub save_model: Option<PathBuf>,
}

/// Contents of `results.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub status: FitStatus,
    pub chi2: f64,
    pub chi2_history: Vec<f64>,
    pub n_evaluations: usize,
    pub iterations: usize,
    pub optimizer: Optimizer,
    pub parameters: Vec<ParamRecord>,
    pub timestamp: String,
}

/// The optimizer to run: the file's settings for the chosen method, with the
/// seed overridden when given.
pub fn choose_optimizer(ws: &Workspace, method: Option<&str>, seed: Option<u64>) -> Result<Optimizer, CliError> {
    let file = ws.file.fit;
    let mut opt = match (method, file) {
        (None, Some(o)) => o,
        (None, None) | (Some("lm"), None) => Optimizer::Lm(LmOptions::default()),
        (Some("lm"), Some(o @ Optimizer::Lm(_))) => o,
        (Some("lm"), Some(_)) => Optimizer::Lm(LmOptions::default()),
        (Some("de"), Some(o @ Optimizer::De(_))) => o,
        (Some("de"), _) => Optimizer::De(DeOptions::default()),
        (Some(other), _) => return Err(CliError::schema("--optimizer", format!("expected lm or de, got `{other}`"))),
    };
    if let (Optimizer::De(o), Some(s)) = (&mut opt, seed) {
        o.seed = s;
    }
    Ok(opt)
}

pub fn fit_error(e: FitError) -> CliError {
    match e {
        FitError::NoFreeParameters
        | FitError::Unbounded(_)
        | FitError::PopulationTooSmall(_)
        | FitError::InvalidOptions(_)
        | FitError::Busy(_) => CliError::schema("fit", e),
        FitError::Model(_) | FitError::Expr(_) => CliError::Eval(e.to_string()),
        FitError::Panicked => CliError::Fit(e.to_string()),
    }
}

pub fn report(ws: &Workspace, optimizer: Optimizer, r: &FitResult) -> FitReport {
    let meta = fit::FitMeta::now(r);
    FitReport {
        status: r.status,
        chi2: r.chi2,
        chi2_history: r.chi2_history.clone(),
        n_evaluations: r.n_evaluations,
        iterations: r.iterations,
        optimizer,
        parameters: Snapshot::capture(&ws.parameters, None).parameters,
        timestamp: meta.timestamp,
    }
}

/// Runs the fit in the foreground. Fitted values stay applied to the
/// workspace parameters.
pub fn run_fit(ws: &Workspace, opts: &FitOptions) -> Result<FitReport, CliError> {
    let optimizer = choose_optimizer(ws, opts.method.as_deref(), opts.seed)?;
    let objective = ws.objective()?;
    let result = fit::run(&objective, &optimizer, &Control::new()).map_err(fit_error)?;
    let rep = report(ws, optimizer, &result);
    if let Some(path) = &opts.out {
        let text = serde_json::to_string_pretty(&rep).expect("report serializes");
        std::fs::write(path, text).map_err(|e| CliError::schema("--out", format!("cannot write {}: {e}", path.display())))?;
    }
    if let Some(path) = &opts.save_model {
        std::fs::write(path, ws.to_json())
            .map_err(|e| CliError::schema("--save-model", format!("cannot write {}: {e}", path.display())))?;
    }
    if result.status == FitStatus::Failed {
        return Err(CliError::Fit(format!("optimizer failed, χ² = {}", result.chi2)));
    }
    Ok(rep)
}
