use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use super::FitError;
use crate::expr::{Overrides, Parameter};
use crate::model::{sum_sq, ModelError, Objective};

/// An objective seen through raw parameter vectors.
pub(crate) struct Problem<'a, O: ?Sized> {
    obj: &'a O,
    pub params: Vec<Parameter>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub dof: f64,
    pub scaled: bool,
    evals: AtomicUsize,
}

impl<'a, O: Objective + ?Sized> Problem<'a, O> {
    pub fn new(obj: &'a O, scaled: bool) -> Result<Self, FitError> {
        let params = obj.parameters();
        if params.is_empty() {
            return Err(FitError::NoFreeParameters);
        }
        let dof = obj.degrees_of_freedom()? as f64;
        let (lo, hi) = params
            .iter()
            .map(|p| p.bounds().unwrap_or((f64::NEG_INFINITY, f64::INFINITY)))
            .unzip();
        Ok(Problem {
            obj,
            params,
            lo,
            hi,
            dof,
            scaled,
            evals: AtomicUsize::new(0),
        })
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn current(&self) -> Vec<f64> {
        self.params.iter().map(Parameter::raw_value).collect()
    }

    pub fn residuals(&self, raw: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.evals.fetch_add(1, Ordering::Relaxed);
        self.obj.residuals(&Overrides::from_raw(&self.params, raw), self.scaled)
    }

    /// Raw residual sum of squares; failures map to +inf.
    pub fn cost(&self, raw: &[f64]) -> f64 {
        self.residuals(raw).map(|r| sum_sq(&r)).unwrap_or(f64::INFINITY)
    }

    pub fn evaluations(&self) -> usize {
        self.evals.load(Ordering::Relaxed)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for ((v, &lo), &hi) in x.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.clamp(lo, hi);
        }
    }

    /// Forward-difference Jacobian of the residuals, column-major by
    /// parameter. Steps go backwards at an upper bound.
    pub fn jacobian(&self, x: &[f64], r0: &[f64]) -> Result<Vec<Vec<f64>>, ModelError> {
        (0..self.dim())
            .into_par_iter()
            .map(|j| {
                let mut h = f64::EPSILON.sqrt() * x[j].abs().max(1.0);
                if x[j] + h > self.hi[j] {
                    h = -h;
                }
                let mut xp = x.to_vec();
                xp[j] += h;
                let h = xp[j] - x[j];
                let rp = self.residuals(&xp)?;
                Ok(rp.iter().zip(r0).map(|(a, b)| (a - b) / h).collect())
            })
            .collect()
    }
}
