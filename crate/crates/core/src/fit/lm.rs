use nalgebra::{DMatrix, DVector};

use super::problem::Problem;
use super::{finish, Control, FitError, FitResult, FitStatus, LmOptions, Reporter};
use crate::model::{sum_sq, Objective};

// damping beyond this without an acceptable step means no descent direction is left
const LAMBDA_MAX: f64 = 1e20;

pub(crate) struct LmOutcome {
    pub x: Vec<f64>,
    pub cost: f64,
    pub status: FitStatus,
    pub iterations: usize,
}

/// LM iterations from `x0` without touching the parameters. Every accepted
/// step is passed to `reporter`; the starting point is not.
pub(crate) fn lm_core<O: Objective + ?Sized>(
    prob: &Problem<O>,
    x0: &[f64],
    opts: &LmOptions,
    mut reporter: Option<&mut Reporter>,
) -> Result<LmOutcome, FitError> {
    let n = prob.dim();
    let mut x = x0.to_vec();
    let mut r = prob.residuals(&x)?;
    let mut cost = sum_sq(&r);
    let mut lambda = opts.lambda_init;
    let mut status = FitStatus::MaxIter;
    let mut iterations = 0;

    'outer: for _ in 0..opts.max_iter {
        if reporter.as_ref().is_some_and(|r| r.interrupted()) {
            status = FitStatus::Interrupted;
            break;
        }
        iterations += 1;
        if cost == 0.0 {
            status = FitStatus::Converged;
            break;
        }
        let jac = prob.jacobian(&x, &r)?;
        let mut a = DMatrix::<f64>::zeros(n, n);
        let mut g = DVector::<f64>::zeros(n);
        for i in 0..n {
            g[i] = jac[i].iter().zip(&r).map(|(j, ri)| j * ri).sum();
            for k in i..n {
                let v: f64 = jac[i].iter().zip(&jac[k]).map(|(a, b)| a * b).sum();
                a[(i, k)] = v;
                a[(k, i)] = v;
            }
        }
        // cosine between residual vector and each Jacobian column
        let rnorm = cost.sqrt();
        let gmax = (0..n)
            .map(|i| {
                let d = a[(i, i)].sqrt();
                if d > 0.0 {
                    g[i].abs() / (d * rnorm)
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max);
        if gmax <= opts.gradient_tol {
            status = FitStatus::Converged;
            break;
        }
        let dmax = (0..n).map(|i| a[(i, i)]).fold(0.0, f64::max);
        let floor = (dmax * 1e-12).max(f64::MIN_POSITIVE);
        loop {
            let mut m = a.clone();
            for i in 0..n {
                m[(i, i)] += lambda * a[(i, i)].max(floor);
            }
            let Some(chol) = m.cholesky() else {
                lambda *= opts.lambda_up;
                if lambda > LAMBDA_MAX {
                    status = FitStatus::Converged;
                    break 'outer;
                }
                continue;
            };
            let delta = chol.solve(&(-&g));
            let mut xn: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, d)| a + d).collect();
            prob.clamp(&mut xn);
            let small = xn
                .iter()
                .zip(&x)
                .all(|(a, b)| (a - b).abs() <= opts.step_tol * (b.abs() + opts.step_tol));
            let trial = prob.residuals(&xn).ok().filter(|rn| rn.iter().all(|v| v.is_finite()));
            let accepted = match trial {
                Some(rn) => {
                    let cn = sum_sq(&rn);
                    if cn <= cost {
                        x = xn;
                        r = rn;
                        cost = cn;
                        true
                    } else {
                        false
                    }
                }
                None => false,
            };
            if accepted {
                lambda = (lambda / opts.lambda_down).max(1e-300);
                if let Some(rep) = reporter.as_deref_mut() {
                    rep.record(cost / prob.dof, &x);
                }
                if small {
                    status = FitStatus::Converged;
                    break 'outer;
                }
                break;
            }
            if small {
                status = FitStatus::Converged;
                break 'outer;
            }
            lambda *= opts.lambda_up;
            if lambda > LAMBDA_MAX {
                status = FitStatus::Converged;
                break 'outer;
            }
        }
    }
    Ok(LmOutcome {
        x,
        cost,
        status,
        iterations,
    })
}

pub fn fit_lm<O: Objective + ?Sized>(target: &O, opts: &LmOptions) -> Result<FitResult, FitError> {
    fit_lm_with(target, opts, &Control::new())
}

/// Levenberg-Marquardt on the raw residual sum; the best point is written
/// back to the parameters, with error estimates.
pub fn fit_lm_with<O: Objective + ?Sized>(target: &O, opts: &LmOptions, control: &Control) -> Result<FitResult, FitError> {
    opts.validate()?;
    let prob = Problem::new(target, opts.scaled)?;
    let x0 = prob.current();
    let r0 = prob.residuals(&x0)?;
    let mut reporter = Reporter::new(control, &prob.params);
    reporter.record(sum_sq(&r0) / prob.dof, &x0);
    let out = lm_core(&prob, &x0, opts, Some(&mut reporter))?;
    let history = reporter.into_history();
    finish(
        target,
        &prob.params,
        &out.x,
        out.cost / prob.dof,
        history,
        out.status,
        prob.evaluations(),
        out.iterations,
    )
}
