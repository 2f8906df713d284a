use std::f64::consts::PI;
use std::sync::Arc;

use scatterfit::data::DataSet;
use scatterfit::expr::{cos, pow, sin, Overrides};
use scatterfit::fit::{
    estimate_errors, fit_de, fit_lm, fit_lm_with, Control, DeOptions, ErrorEstimate, FitError, FitEvent, FitHandle,
    FitStatus, LmOptions, Optimizer, Snapshot,
};
use scatterfit::model::{chi2_current, Model, ModelError, MultiModel, Objective, Scaling};
use scatterfit::{Expr, Functor, Parameter, Variable};

struct Toy {
    params: Vec<Parameter>,
    f: fn(&[f64]) -> Vec<f64>,
}

impl Objective for Toy {
    fn parameters(&self) -> Vec<Parameter> {
        self.params.iter().filter(|p| !p.is_fixed()).cloned().collect()
    }

    fn residuals(&self, ov: &Overrides, _scaled: bool) -> Result<Vec<f64>, ModelError> {
        let x: Vec<f64> = self.params.iter().map(|p| ov.value_of(p)).collect();
        Ok((self.f)(&x))
    }

    fn active_len(&self) -> usize {
        100
    }

    fn degrees_of_freedom(&self) -> Result<usize, ModelError> {
        Ok(1)
    }
}

fn bounded(name: &str, v: f64, lo: f64, hi: f64) -> Parameter {
    Parameter::builder(name, v).bounds(lo, hi).build().unwrap()
}

fn line_model(xs: &[f64], ys: &[f64], sigma: Option<Vec<f64>>) -> (Parameter, Parameter, Model) {
    let a = Parameter::new("a", 0.0);
    let b = Parameter::new("b", 0.0);
    let x = Variable::new("x");
    let f = Functor::new("line", &a * &x + &b).unwrap();
    let d = DataSet::new_1d("d", xs.to_vec(), ys.to_vec(), sigma).unwrap();
    (a, b, Model::new("m", f, d, Scaling::Linear).unwrap())
}

/// Weighted least squares for y = a x + b: (a, b, sigma_a, sigma_b) with the
/// textbook normal-equation formulas, covariance scaled by reduced chi2.
fn wls(xs: &[f64], ys: &[f64], s: &[f64]) -> (f64, f64, f64, f64) {
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..xs.len() {
        let w = 1.0 / (s[i] * s[i]);
        sw += w;
        sx += w * xs[i];
        sy += w * ys[i];
        sxx += w * xs[i] * xs[i];
        sxy += w * xs[i] * ys[i];
    }
    let det = sw * sxx - sx * sx;
    let a = (sw * sxy - sx * sy) / det;
    let b = (sxx * sy - sx * sxy) / det;
    let chi2: f64 = (0..xs.len())
        .map(|i| ((ys[i] - a * xs[i] - b) / s[i]).powi(2))
        .sum::<f64>()
        / (xs.len() as f64 - 2.0);
    (a, b, (chi2 * sw / det).sqrt(), (chi2 * sxx / det).sqrt())
}

#[test]
fn exact_line_recovered() {
    let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
    let (a, b, m) = line_model(&xs, &ys, Some(vec![1.0; 10]));
    let (ea, eb, _, _) = wls(&xs, &ys, &[1.0; 10]);
    let r = fit_lm(&m, &LmOptions::default()).unwrap();
    assert_eq!(r.status, FitStatus::Converged);
    assert!((a.value() - ea).abs() < 1e-10 && (ea - 2.0).abs() < 1e-12);
    assert!((b.value() - eb).abs() < 1e-10 && (eb - 1.0).abs() < 1e-12);
    assert!(r.chi2 < 1e-18);
}

#[test]
fn all_fixed_is_an_error() {
    let xs = [1.0, 2.0, 3.0];
    let (a, b, m) = line_model(&xs, &[1.0, 2.0, 3.0], None);
    a.set_fixed(true);
    b.set_fixed(true);
    assert_eq!(fit_lm(&m, &LmOptions::default()).unwrap_err(), FitError::NoFreeParameters);
}

fn sphere_model(r0: f64) -> (Parameter, Model) {
    let r = Parameter::builder("R", r0).bounds(1.0, 20.0).build().unwrap();
    let c = Parameter::builder("C", 1.2).scale(1e-3).fixed(true).build().unwrap();
    let bg = Parameter::builder("B", 4.0).fixed(true).build().unwrap();
    let q = Variable::new("q");
    let v = 4.0 / 3.0 * PI * pow(&r, 3.0);
    let qr = &q * &r;
    let f = 3.0 * (sin(&qr) - &qr * cos(&qr)) / pow(&qr, 3.0);
    let i = Functor::new("I", 1e5 * pow(&c * v * f, 2.0) + &bg).unwrap();
    let qs: Vec<f64> = (1..300).map(|k| k as f64 * 0.005).collect();
    // data from the same forward model at R = 7.5
    let truth = {
        let rt = Parameter::new("Rt", 7.5);
        let vt = 4.0 / 3.0 * PI * pow(&rt, 3.0);
        let qt = &q * &rt;
        let ft = 3.0 * (sin(&qt) - &qt * cos(&qt)) / pow(&qt, 3.0);
        Functor::new("It", 1e5 * pow(1.2e-3 * vt * ft, 2.0) + 4.0).unwrap().evaluate_real(&[&qs]).unwrap()
    };
    let d = DataSet::new_1d("sphere", qs, truth, None).unwrap();
    (r, Model::new("sphere", i, d, Scaling::Log).unwrap())
}

#[test]
fn sphere_radius_recovered() {
    let (r, m) = sphere_model(7.0);
    let res = fit_lm(&m, &LmOptions::default()).unwrap();
    assert!((r.value() - 7.5).abs() < 1e-6, "R = {}", r.value());
    assert!(res.chi2_history.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(res.parameters.len(), 1);
}

fn sphere_fn(x: &[f64]) -> Vec<f64> {
    x.to_vec()
}

fn rosenbrock(x: &[f64]) -> Vec<f64> {
    vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]]
}

fn de_opts(seed: u64) -> DeOptions {
    DeOptions {
        population_size: 40,
        f: 0.8,
        cr: 0.9,
        max_generations: 200,
        final_polish_iters: 100,
        seed,
        ..DeOptions::default()
    }
}

#[test]
fn de_sphere_function() {
    let toy = Toy {
        params: (0..4).map(|i| bounded(&format!("p{i}"), 3.0, -5.0, 5.0)).collect(),
        f: sphere_fn,
    };
    let r = fit_de(&toy, &de_opts(7)).unwrap();
    assert!(r.chi2 < 1e-10, "{}", r.chi2);
    assert!(r.chi2_history.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn de_rosenbrock() {
    let toy = Toy {
        params: vec![bounded("x", -1.5, -2.0, 2.0), bounded("y", 1.8, -2.0, 2.0)],
        f: rosenbrock,
    };
    fit_de(&toy, &de_opts(11)).unwrap();
    assert!((toy.params[0].value() - 1.0).abs() < 1e-6);
    assert!((toy.params[1].value() - 1.0).abs() < 1e-6);
}

#[test]
fn de_is_deterministic_under_seed() {
    let run = || {
        let toy = Toy {
            params: vec![bounded("x", 0.0, -2.0, 2.0), bounded("y", 0.0, -2.0, 2.0)],
            f: rosenbrock,
        };
        fit_de(&toy, &DeOptions { candidate_polish_iters: 2, ..de_opts(3) }).unwrap().chi2_history
    };
    let (h1, h2) = (run(), run());
    assert_eq!(h1.len(), h2.len());
    assert!(h1.iter().zip(&h2).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn de_requires_bounds_and_population() {
    let toy = Toy {
        params: vec![Parameter::new("x", 0.0), bounded("y", 0.0, -1.0, 1.0)],
        f: rosenbrock,
    };
    assert!(matches!(fit_de(&toy, &de_opts(0)), Err(FitError::Unbounded(_))));
    let toy = Toy {
        params: vec![bounded("x", 0.0, -1.0, 1.0), bounded("y", 0.0, -1.0, 1.0)],
        f: rosenbrock,
    };
    let small = DeOptions {
        population_size: 3,
        ..de_opts(0)
    };
    assert!(matches!(fit_de(&toy, &small), Err(FitError::PopulationTooSmall(3))));
}

#[test]
fn errors_match_weighted_least_squares() {
    let xs: Vec<f64> = (0..12).map(|i| i as f64 * 0.5).collect();
    let noise = [0.3, -0.2, 0.1, 0.4, -0.5, 0.2, -0.1, 0.0, 0.3, -0.3, 0.2, -0.4];
    let ys: Vec<f64> = xs.iter().zip(noise).map(|(x, n)| 1.5 * x - 2.0 + n).collect();
    let s = vec![0.7; 12];
    let (a, b, m) = line_model(&xs, &ys, Some(s.clone()));
    let r = fit_lm(&m, &LmOptions::default()).unwrap();
    let (ea, eb, sa, sb) = wls(&xs, &ys, &s);
    // forward differences on noisy data limit the optimum to ~1e-9
    assert!((a.value() - ea).abs() < 1e-7);
    assert!((b.value() - eb).abs() < 1e-7, "{} {} {:?}", b.value(), eb, r);
    let est = estimate_errors(&m).unwrap();
    let (ga, gb) = (est[0].value().unwrap(), est[1].value().unwrap());
    assert!((ga - sa).abs() / sa < 1e-8, "{ga} vs {sa}");
    assert!((gb - sb).abs() / sb < 1e-8, "{gb} vs {sb}");
    assert_eq!(a.error(), Some(ga));
}

#[test]
fn duplicated_parameter_single_error_entry() {
    let a = Parameter::new("a", 1.0);
    let alias = a.clone();
    let x = Variable::new("x");
    let f = Functor::new("f", &a * &x + &alias).unwrap();
    let d = DataSet::new_1d("d", vec![1.0, 2.0, 3.0], vec![2.0, 3.1, 4.0], None).unwrap();
    let m = Model::new("m", f, d, Scaling::Linear).unwrap();
    assert_eq!(estimate_errors(&m).unwrap().len(), 1);
}

#[test]
fn ignored_parameter_is_unidentifiable() {
    let a = Parameter::new("a", 1.0);
    let unused = Parameter::new("u", 1.0);
    let x = Variable::new("x");
    let f = Functor::new("f", &a * &x + 0.0 * &unused).unwrap();
    let d = DataSet::new_1d("d", vec![1.0, 2.0, 3.0], vec![1.1, 2.0, 2.9], None).unwrap();
    let m = Model::new("m", f, d, Scaling::Linear).unwrap();
    let e = estimate_errors(&m).unwrap();
    assert!(matches!(e[0], ErrorEstimate::Value(v) if v > 0.0));
    assert_eq!(e[1], ErrorEstimate::Unidentifiable);
    assert_eq!(unused.error(), None);

    // two parameters entering only as a sum
    let p = Parameter::new("p", 1.0);
    let q = Parameter::new("q", 1.0);
    let f = Functor::new("g", (&p + &q) * &x).unwrap();
    let d = DataSet::new_1d("d", vec![1.0, 2.0, 3.0], vec![1.1, 2.0, 2.9], None).unwrap();
    let m = Model::new("m", f, d, Scaling::Linear).unwrap();
    let e = estimate_errors(&m).unwrap();
    assert!(e.iter().all(|e| *e == ErrorEstimate::Unidentifiable));
}

#[test]
fn fixed_and_bounds_respected() {
    let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
    let (a, b, m) = line_model(&xs, &ys, None);
    a.set_bounds(Some((0.0, 1.5))).unwrap();
    b.set_raw_value(0.25).unwrap();
    b.set_fixed(true);
    fit_lm(&m, &LmOptions::default()).unwrap();
    assert_eq!(b.raw_value().to_bits(), 0.25f64.to_bits());
    assert!(a.raw_value() <= 1.5 && a.raw_value() >= 0.0);
    assert_eq!(a.raw_value(), 1.5);
}

#[test]
fn joint_fit_of_disjoint_models_equals_separate_fits() {
    let xs: Vec<f64> = (0..15).map(|i| i as f64 * 0.3).collect();
    let y1: Vec<f64> = xs.iter().map(|x| (0.7 * x).exp() + 0.1 * (3.0 * x).sin()).collect();
    let y2: Vec<f64> = xs.iter().map(|x| 3.0 / (1.0 + x) + 0.05 * (5.0 * x).cos()).collect();
    let mk = || {
        let k = Parameter::new("k", 0.5);
        let c = Parameter::new("c", 2.0);
        let x = Variable::new("x");
        let f1 = Functor::new("f1", scatterfit::expr::exp(&k * &x)).unwrap();
        let z = Variable::new("z");
        let f2 = Functor::new("f2", &c / (1.0 + &z)).unwrap();
        let m1 = Model::new("m1", f1, DataSet::new_1d("d1", xs.clone(), y1.clone(), Some(vec![0.1; 15])).unwrap(), Scaling::Linear).unwrap();
        let m2 = Model::new("m2", f2, DataSet::new_1d("d2", xs.clone(), y2.clone(), Some(vec![0.1; 15])).unwrap(), Scaling::Linear).unwrap();
        (k, c, m1, m2)
    };
    let (k, c, m1, m2) = mk();
    fit_lm(&MultiModel::new(vec![m1, m2]), &LmOptions::default()).unwrap();
    let (k2, c2, n1, n2) = mk();
    fit_lm(&n1, &LmOptions::default()).unwrap();
    fit_lm(&n2, &LmOptions::default()).unwrap();
    assert!((k.value() - k2.value()).abs() < 1e-8);
    assert!((c.value() - c2.value()).abs() < 1e-8);
}

#[test]
fn shared_parameter_minimizes_combined_sum() {
    let s = Parameter::new("s", 1.0);
    let x = Variable::new("x");
    let mk = |ys: Vec<f64>, sig: f64| {
        let f = Functor::new("f", &s * &x).unwrap();
        Model::new("m", f, DataSet::new_1d("d", vec![1.0, 2.0, 3.0], ys, Some(vec![sig; 3])).unwrap(), Scaling::Linear).unwrap()
    };
    let mm = MultiModel::new(vec![mk(vec![2.0, 4.1, 5.9], 0.5), mk(vec![3.1, 5.8, 9.2], 1.0)]);
    assert_eq!(mm.parameters().len(), 1);
    fit_lm(&mm, &LmOptions::default()).unwrap();
    let fitted = s.value();
    // brute-force grid oracle on the pooled sum
    let sum_at = |v: f64| {
        let ov = {
            let mut o = Overrides::new();
            o.set(&s, v);
            o
        };
        mm.residuals(&ov, true).unwrap().iter().map(|r| r * r).sum::<f64>()
    };
    let grid = |lo: f64, step: f64, n: usize| {
        (0..=n)
            .map(|i| lo + i as f64 * step)
            .map(|v| (sum_at(v), v))
            .fold((f64::INFINITY, 0.0), |b, c| if c.0 < b.0 { c } else { b })
            .1
    };
    let coarse = grid(0.0, 1e-3, 4000);
    let best_v = grid(coarse - 1e-3, 1e-7, 20_000);
    assert!((fitted - best_v).abs() < 2e-7, "{fitted} vs {best_v}");
}

#[test]
fn controller_interrupt_and_history() {
    let (r, m) = sphere_model(6.0);
    let m = Arc::new(m);
    let h = FitHandle::start(m.clone(), Optimizer::Lm(LmOptions::default())).unwrap();
    h.interrupt();
    let res = h.wait().unwrap();
    assert!(matches!(res.status, FitStatus::Interrupted | FitStatus::Converged));
    let best = res.chi2_history.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!((chi2_current(&*m, true).unwrap() - best).abs() <= 1e-12 * best.max(1.0));
    assert_eq!(r.raw_value(), res.parameters[0].raw_value);

    let h = FitHandle::start(m.clone(), Optimizer::Lm(LmOptions::default())).unwrap();
    let sub = h.subscribe();
    let res = h.wait().unwrap();
    let mut events = sub.replay;
    events.extend(sub.receiver.iter());
    let chi: Vec<f64> = events
        .iter()
        .filter_map(|e| match e {
            FitEvent::Progress(p) => Some(p.chi2),
            _ => None,
        })
        .collect();
    assert_eq!(chi, res.chi2_history);
    assert_eq!(events.iter().filter(|e| e.is_terminal()).count(), 1);
    assert!(events.last().unwrap().is_terminal());
}

#[test]
fn concurrent_start_on_same_pool_rejected_disjoint_allowed() {
    let toy = Arc::new(Toy {
        params: vec![bounded("x", -1.5, -2.0, 2.0), bounded("y", 1.8, -2.0, 2.0)],
        f: rosenbrock,
    });
    let slow = Optimizer::De(DeOptions {
        max_generations: usize::MAX,
        ..de_opts(1)
    });
    let h = FitHandle::start(toy.clone(), slow).unwrap();
    assert!(matches!(FitHandle::start(toy.clone(), slow), Err(FitError::Busy(_))));

    let (a, b, m) = line_model(&[0.0, 1.0, 2.0, 3.0], &[1.0, 3.0, 5.0, 7.0], None);
    let other = FitHandle::start(Arc::new(m), Optimizer::Lm(LmOptions::default())).unwrap();
    other.wait().unwrap();
    assert!((a.value() - 2.0).abs() < 1e-9 && (b.value() - 1.0).abs() < 1e-9);
    h.interrupt();
    assert_eq!(h.wait().unwrap().status, FitStatus::Interrupted);
    // pool released
    FitHandle::start(toy, Optimizer::Lm(LmOptions::default())).unwrap().wait().unwrap();
}

#[test]
fn lm_monotone_with_sink() {
    let (_, m) = sphere_model(5.0);
    let seen = Arc::new(parking_lot::Mutex::new(Vec::new()));
    let s2 = seen.clone();
    let control = Control::with_sink(move |p| s2.lock().push(p.chi2));
    let r = fit_lm_with(&m, &LmOptions::default(), &control).unwrap();
    assert_eq!(*seen.lock(), r.chi2_history);
    assert!(r.chi2_history.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn snapshot_round_trip() {
    let a = Parameter::builder("a", 2.0).scale(1e-3).bounds(0.0, 5.0).units("nm").build().unwrap();
    let b = Parameter::new("b", -1.0);
    a.set_error(Some(0.1));
    let snap = Snapshot::capture(&[a.clone(), b.clone()], None);
    let text = snap.to_json();
    assert!(text.contains("\"p0\""));
    a.set_raw_value(4.0).unwrap();
    b.set_fixed(true);
    Snapshot::from_json(&text).unwrap().apply(&[a.clone(), b.clone()]).unwrap();
    assert_eq!(a.raw_value(), 2.0);
    assert_eq!(a.error(), Some(0.1));
    assert!(!b.is_fixed());

    let mut bad = Snapshot::from_json(&text).unwrap();
    bad.parameters[0].raw_value = 9.0;
    assert!(bad.apply(&[a.clone(), b.clone()]).is_err());
    assert_eq!(a.raw_value(), 2.0);
    assert!(Snapshot::from_json("{").is_err());
    let _ = Expr::from(&a);
}
