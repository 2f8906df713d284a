use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::problem::Problem;
use super::FitError;
use crate::model::{sum_sq, Objective};

// relative eigenvalue below which a direction counts as unconstrained
const NULL_EIGEN: f64 = 1e-12;
// component of a null direction large enough to implicate a parameter
const NULL_COMPONENT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorEstimate {
    Value(f64),
    Unidentifiable,
}

impl ErrorEstimate {
    pub fn value(self) -> Option<f64> {
        match self {
            ErrorEstimate::Value(v) => Some(v),
            ErrorEstimate::Unidentifiable => None,
        }
    }
}

/// Standard errors of the pool parameters (raw units) from the unscaled
/// residuals at the current point: `cov = χ²_red (JᵀJ)⁻¹`. Results are also
/// stored on each parameter.
pub fn estimate_errors<O: Objective + ?Sized>(target: &O) -> Result<Vec<ErrorEstimate>, FitError> {
    let prob = Problem::new(target, false)?;
    let x = prob.current();
    let r = prob.residuals(&x)?;
    let chi2 = sum_sq(&r) / prob.dof;
    let n = prob.dim();

    // central differences: this is done once, and accuracy matters more than cost
    let jac: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let h = f64::EPSILON.cbrt() * x[j].abs().max(1.0);
            let (mut lo, mut hi) = (x.to_vec(), x.to_vec());
            hi[j] = (x[j] + h).min(prob.hi[j]);
            lo[j] = (x[j] - h).max(prob.lo[j]);
            let (rl, rh) = (prob.residuals(&lo)?, prob.residuals(&hi)?);
            let d = hi[j] - lo[j];
            Ok(rh.iter().zip(&rl).map(|(a, b)| (a - b) / d).collect())
        })
        .collect::<Result<_, FitError>>()?;

    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for k in i..n {
            let v: f64 = jac[i].iter().zip(&jac[k]).map(|(a, b)| a * b).sum();
            a[(i, k)] = v;
            a[(k, i)] = v;
        }
    }

    let mut ok: Vec<bool> = (0..n).map(|i| a[(i, i)] > 0.0 && a[(i, i)].is_finite()).collect();
    let idx: Vec<usize> = (0..n).filter(|&i| ok[i]).collect();
    if !idx.is_empty() {
        // correlation form so the eigenvalue test ignores parameter units
        let d: Vec<f64> = idx.iter().map(|&i| a[(i, i)].sqrt()).collect();
        let c = DMatrix::from_fn(idx.len(), idx.len(), |p, q| a[(idx[p], idx[q])] / (d[p] * d[q]));
        let eig = c.symmetric_eigen();
        let emax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        for (k, &ev) in eig.eigenvalues.iter().enumerate() {
            if ev <= NULL_EIGEN * emax {
                for (p, &i) in idx.iter().enumerate() {
                    if eig.eigenvectors[(p, k)].abs() > NULL_COMPONENT {
                        ok[i] = false;
                    }
                }
            }
        }
    }
    let keep: Vec<usize> = (0..n).filter(|&i| ok[i]).collect();
    let mut out = vec![ErrorEstimate::Unidentifiable; n];
    if !keep.is_empty() {
        let sub = DMatrix::from_fn(keep.len(), keep.len(), |p, q| a[(keep[p], keep[q])]);
        if let Some(ch) = sub.cholesky() {
            let inv = ch.inverse();
            for (p, &i) in keep.iter().enumerate() {
                out[i] = ErrorEstimate::Value((chi2 * inv[(p, p)]).sqrt());
            }
        }
    }
    for (p, e) in prob.params.iter().zip(&out) {
        p.set_error(e.value());
    }
    Ok(out)
}
