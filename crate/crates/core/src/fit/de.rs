use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::lm::lm_core;
use super::problem::Problem;
use super::{finish, Control, DeOptions, FitError, FitResult, FitStatus, LmOptions, Reporter};
use crate::model::Objective;

/// Mirrors `x` into `[lo, hi]` across whichever bound it violates, as many
/// times as needed.
pub(crate) fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let w = hi - lo;
    if w <= 0.0 {
        return lo;
    }
    if (lo..=hi).contains(&x) {
        return x;
    }
    let t = (x - lo).rem_euclid(2.0 * w);
    let y = if t > w { lo + 2.0 * w - t } else { lo + t };
    y.clamp(lo, hi)
}

fn polish_opts(iters: usize) -> LmOptions {
    LmOptions {
        max_iter: iters,
        ..LmOptions::default()
    }
}

pub fn fit_de<O: Objective + ?Sized>(target: &O, opts: &DeOptions) -> Result<FitResult, FitError> {
    fit_de_with(target, opts, &Control::new())
}

/// Differential evolution (rand/1/bin) inside the parameters' bounds. The
/// current point seeds member 0; trial vectors are drawn sequentially from a
/// seeded generator and evaluated in parallel, so runs are reproducible.
pub fn fit_de_with<O: Objective + ?Sized>(target: &O, opts: &DeOptions, control: &Control) -> Result<FitResult, FitError> {
    opts.validate()?;
    let prob = Problem::new(target, opts.scaled)?;
    for (i, p) in prob.params.iter().enumerate() {
        if !(prob.lo[i].is_finite() && prob.hi[i].is_finite()) {
            return Err(FitError::Unbounded(p.name()));
        }
    }
    let n = prob.dim();
    let np = opts.population_size;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let x0 = prob.current();
    prob.residuals(&x0)?;
    let mut pop: Vec<Vec<f64>> = Vec::with_capacity(np);
    pop.push(x0);
    for _ in 1..np {
        pop.push((0..n).map(|j| rng.gen_range(prob.lo[j]..=prob.hi[j])).collect());
    }
    let mut costs: Vec<f64> = pop.par_iter().map(|x| prob.cost(x)).collect();
    let best_of = |c: &[f64]| {
        c.iter()
            .enumerate()
            .fold(0, |b, (i, &v)| if v < c[b] { i } else { b })
    };
    let mut best = best_of(&costs);
    let mut reporter = Reporter::new(control, &prob.params);
    reporter.record(costs[best] / prob.dof, &pop[best]);

    let mut status = FitStatus::MaxIter;
    let mut generations = 0;
    for _ in 0..opts.max_generations {
        if reporter.interrupted() {
            status = FitStatus::Interrupted;
            break;
        }
        generations += 1;
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|i| {
                let mut pick = || loop {
                    let k = rng.gen_range(0..np);
                    if k != i {
                        break k;
                    }
                };
                let a = pick();
                let b = loop {
                    let k = pick();
                    if k != a {
                        break k;
                    }
                };
                let c = loop {
                    let k = pick();
                    if k != a && k != b {
                        break k;
                    }
                };
                let forced = rng.gen_range(0..n);
                (0..n)
                    .map(|j| {
                        let cross = rng.gen::<f64>() < opts.cr;
                        if cross || j == forced {
                            let v = pop[a][j] + opts.f * (pop[b][j] - pop[c][j]);
                            reflect(v, prob.lo[j], prob.hi[j])
                        } else {
                            pop[i][j]
                        }
                    })
                    .collect()
            })
            .collect();
        let evaluated: Vec<(Vec<f64>, f64)> = trials
            .into_par_iter()
            .enumerate()
            .map(|(i, t)| {
                let c = prob.cost(&t);
                if opts.candidate_polish_iters > 0 && c <= costs[i] && c.is_finite() {
                    if let Ok(p) = lm_core(&prob, &t, &polish_opts(opts.candidate_polish_iters), None) {
                        if p.cost <= c {
                            return (p.x, p.cost);
                        }
                    }
                }
                (t, c)
            })
            .collect();
        for (i, (t, c)) in evaluated.into_iter().enumerate() {
            if c <= costs[i] {
                pop[i] = t;
                costs[i] = c;
            }
        }
        best = best_of(&costs);
        reporter.record(costs[best] / prob.dof, &pop[best]);
        if opts.tol > 0.0 || opts.atol > 0.0 {
            let finite: Vec<f64> = costs.iter().copied().filter(|c| c.is_finite()).collect();
            if finite.len() == np {
                let mean = finite.iter().sum::<f64>() / np as f64;
                let var = finite.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / np as f64;
                if var.sqrt() <= opts.atol + opts.tol * mean.abs() {
                    status = FitStatus::Converged;
                    break;
                }
            }
        }
    }

    let mut x = pop[best].clone();
    let mut cost = costs[best];
    if !cost.is_finite() {
        status = FitStatus::Failed;
    } else if opts.final_polish_iters > 0 && status != FitStatus::Interrupted {
        let p = lm_core(&prob, &x, &polish_opts(opts.final_polish_iters), Some(&mut reporter))?;
        if p.cost <= cost {
            x = p.x;
            cost = p.cost;
        }
        if p.status == FitStatus::Interrupted {
            status = FitStatus::Interrupted;
        }
    }
    let history = reporter.into_history();
    finish(
        target,
        &prob.params,
        &x,
        cost / prob.dof,
        history,
        status,
        prob.evaluations(),
        generations,
    )
}
