//! Functor/data binding, residual scaling and the reduced χ² cost.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataSet;
use crate::expr::{EvalError, Functor, Overrides, Parameter};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("functor `{functor}` has {arity} variables but data `{data}` has {dims} dimensions")]
    Arity {
        functor: String,
        data: String,
        arity: usize,
        dims: usize,
    },
    #[error("functor `{0}` is complex-valued; a model needs a real intensity")]
    ComplexFunctor(String),
    #[error("empty active set in `{0}`")]
    EmptyActiveSet(String),
    #[error("log scaling needs positive intensity; `{data}` has {value} at index {index}")]
    NonPositiveLog { data: String, index: usize, value: f64 },
    #[error("non-finite model value {value} in `{model}` at index {index}")]
    NonFinite { model: String, index: usize, value: f64 },
    #[error("need more active points ({n}) than free parameters ({m})")]
    TooFewPoints { n: usize, m: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scaling {
    #[default]
    Linear,
    Log,
    Q2,
    Q4,
}

impl Scaling {
    pub fn parse(s: &str) -> Option<Scaling> {
        match s.to_ascii_lowercase().as_str() {
            "linear" | "lin" => Some(Scaling::Linear),
            "log" => Some(Scaling::Log),
            "q2" => Some(Scaling::Q2),
            "q4" => Some(Scaling::Q4),
            _ => None,
        }
    }

    /// Single residual `(T(I_exp) - T(I_mod)) / T_sigma`.
    pub fn residual(self, q: f64, exp: f64, model: f64, sigma: f64) -> f64 {
        match self {
            Scaling::Linear => (exp - model) / sigma,
            Scaling::Log => (exp.ln() - model.ln()) / (sigma / exp),
            Scaling::Q2 => {
                let w = q * q;
                (w * exp - w * model) / (w * sigma)
            }
            Scaling::Q4 => {
                let w = q.powi(4);
                (w * exp - w * model) / (w * sigma)
            }
        }
    }
}

/// Anything the optimizers can minimize: a residual vector over a pool of
/// free parameters, evaluated under parameter overrides.
pub trait Objective: Sync {
    /// Free parameters, each listed once.
    fn parameters(&self) -> Vec<Parameter>;

    /// Residuals with the given overrides; `scaled = false` forces linear.
    fn residuals(&self, overrides: &Overrides, scaled: bool) -> Result<Vec<f64>, ModelError>;

    fn active_len(&self) -> usize;

    /// `N - M` used to normalize χ².
    fn degrees_of_freedom(&self) -> Result<usize, ModelError> {
        let n = self.active_len();
        let m = self.parameters().len();
        if n <= m {
            return Err(ModelError::TooFewPoints { n, m });
        }
        Ok(n - m)
    }
}

/// Reduced χ²: `Σ r² / (N - M)`.
pub fn chi2<O: Objective + ?Sized>(obj: &O, overrides: &Overrides, scaled: bool) -> Result<f64, ModelError> {
    let dof = obj.degrees_of_freedom()?;
    let r = obj.residuals(overrides, scaled)?;
    Ok(sum_sq(&r) / dof as f64)
}

/// χ² at the parameters' current values.
pub fn chi2_current<O: Objective + ?Sized>(obj: &O, scaled: bool) -> Result<f64, ModelError> {
    chi2(obj, &Overrides::new(), scaled)
}

pub fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

#[derive(Debug, Clone)]
pub struct Model {
    name: String,
    functor: Functor,
    data: DataSet,
    scaling: Scaling,
}

impl Model {
    pub fn new(name: impl Into<String>, functor: Functor, data: DataSet, scaling: Scaling) -> Result<Model, ModelError> {
        if functor.arity() != data.dims() {
            return Err(ModelError::Arity {
                functor: functor.name().to_string(),
                data: data.name().to_string(),
                arity: functor.arity(),
                dims: data.dims(),
            });
        }
        if functor.is_complex() {
            return Err(ModelError::ComplexFunctor(functor.name().to_string()));
        }
        Ok(Model {
            name: name.into(),
            functor,
            data,
            scaling,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn functor(&self) -> &Functor {
        &self.functor
    }

    pub fn data(&self) -> &DataSet {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut DataSet {
        &mut self.data
    }

    pub fn scaling(&self) -> Scaling {
        self.scaling
    }

    pub fn set_scaling(&mut self, s: Scaling) {
        self.scaling = s;
    }

    /// Model intensity at the active points.
    pub fn predict(&self, overrides: &Overrides) -> Result<Vec<f64>, ModelError> {
        let coords = self.data.active_coords();
        let refs: Vec<&[f64]> = coords.iter().map(Vec::as_slice).collect();
        Ok(self.functor.evaluate_with(&refs, overrides)?.into_real()?)
    }
}

impl Objective for Model {
    fn parameters(&self) -> Vec<Parameter> {
        self.functor.free_parameters()
    }

    fn residuals(&self, overrides: &Overrides, scaled: bool) -> Result<Vec<f64>, ModelError> {
        let idx = self.data.active_indices();
        if idx.is_empty() {
            return Err(ModelError::EmptyActiveSet(self.data.name().to_string()));
        }
        let scaling = if scaled { self.scaling } else { Scaling::Linear };
        let exp = self.data.intensity();
        if scaling == Scaling::Log {
            if let Some(&i) = idx.iter().find(|&&i| !(exp[i] > 0.0)) {
                return Err(ModelError::NonPositiveLog {
                    data: self.data.name().to_string(),
                    index: i,
                    value: exp[i],
                });
            }
        }
        let model = self.predict(overrides)?;
        let coords = self.data.coords();
        let sigma = self.data.sigma();
        let mut out = Vec::with_capacity(idx.len());
        for (k, &i) in idx.iter().enumerate() {
            let m = model[k];
            if !m.is_finite() {
                return Err(ModelError::NonFinite {
                    model: self.name.clone(),
                    index: i,
                    value: m,
                });
            }
            let q = if coords.len() == 1 {
                coords[0][i]
            } else {
                coords.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt()
            };
            let r = scaling.residual(q, exp[i], m, sigma[i]);
            if !r.is_finite() {
                return Err(ModelError::NonFinite {
                    model: self.name.clone(),
                    index: i,
                    value: m,
                });
            }
            out.push(r);
        }
        Ok(out)
    }

    fn active_len(&self) -> usize {
        self.data.active_len()
    }
}

/// Several models fitted together over one pooled parameter set.
#[derive(Debug, Clone, Default)]
pub struct MultiModel {
    models: Vec<Model>,
}

impl MultiModel {
    pub fn new(models: Vec<Model>) -> MultiModel {
        MultiModel { models }
    }

    pub fn push(&mut self, m: Model) {
        self.models.push(m);
    }

    pub fn models(&self) -> &[Model] {
        &self.models
    }

    pub fn models_mut(&mut self) -> &mut [Model] {
        &mut self.models
    }
}

/// Union of parameter lists, first occurrence wins.
pub fn pool(lists: impl IntoIterator<Item = Vec<Parameter>>) -> Vec<Parameter> {
    let mut out: Vec<Parameter> = Vec::new();
    for list in lists {
        for p in list {
            if !out.iter().any(|q| q.id() == p.id()) {
                out.push(p);
            }
        }
    }
    out
}

impl Objective for MultiModel {
    fn parameters(&self) -> Vec<Parameter> {
        pool(self.models.iter().map(|m| m.parameters()))
    }

    fn residuals(&self, overrides: &Overrides, scaled: bool) -> Result<Vec<f64>, ModelError> {
        if self.models.is_empty() {
            return Err(ModelError::EmptyActiveSet("(no models)".into()));
        }
        let mut out = Vec::new();
        for m in &self.models {
            out.extend(m.residuals(overrides, scaled)?);
        }
        Ok(out)
    }

    fn active_len(&self) -> usize {
        self.models.iter().map(|m| m.active_len()).sum()
    }
}
