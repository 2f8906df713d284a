//! Integral functors: definite integration over a variable, gaussian
//! averaging over a parameter and gaussian resolution smearing along a
//! variable, each with a fixed-order or adaptive Gauss-Legendre rule.

mod adaptive;
mod rules;

use std::f64::consts::{LN_2, PI};
use std::ops::{Add, Mul, Sub};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Domain, EvalCtx, EvalError, Expr, Functor, Parameter, Special, Variable};

pub use adaptive::Quadrature;
pub use rules::{GaussLegendre, QuadValue};

static NONCONVERGED: AtomicU64 = AtomicU64::new(0);

/// Number of adaptive integrations (process-wide) that hit the depth limit
/// before meeting their tolerance.
pub fn nonconverged_count() -> u64 {
    NONCONVERGED.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadError {
    #[error("invalid integration settings: {0}")]
    InvalidSpec(String),
    #[error("variable `{0}` is not free in the integrand")]
    NotFree(String),
    #[error("parameter `{0}` is not reachable from the integrand")]
    ParameterNotReachable(String),
    #[error("span must be positive, got {0}")]
    InvalidSpan(f64),
    #[error(transparent)]
    Expr(#[from] crate::expr::ExprError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum IntegrationSpec {
    /// One Gauss-Legendre rule of `order` points over the whole interval.
    Fixed { order: usize },
    /// Bisection comparing `order`- and `2*order`-point rules per subinterval.
    Adaptive {
        order: usize,
        rel_tol: f64,
        abs_tol: f64,
        max_depth: u32,
    },
}

impl IntegrationSpec {
    pub fn fixed(order: usize) -> Self {
        IntegrationSpec::Fixed { order }
    }

    pub fn adaptive(rel_tol: f64, abs_tol: f64) -> Self {
        IntegrationSpec::Adaptive {
            order: 7,
            rel_tol,
            abs_tol,
            max_depth: 40,
        }
    }

    pub fn validate(&self) -> Result<(), QuadError> {
        match *self {
            IntegrationSpec::Fixed { order } if order == 0 => {
                Err(QuadError::InvalidSpec("order must be at least 1".into()))
            }
            IntegrationSpec::Adaptive { order, .. } if order == 0 => {
                Err(QuadError::InvalidSpec("order must be at least 1".into()))
            }
            IntegrationSpec::Adaptive { rel_tol, abs_tol, .. } if !(rel_tol > 0.0 && abs_tol > 0.0) => {
                Err(QuadError::InvalidSpec("tolerances must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

impl Default for IntegrationSpec {
    fn default() -> Self {
        IntegrationSpec::adaptive(1e-8, 1e-14)
    }
}

/// A spec with its rules resolved.
#[derive(Debug, Clone)]
struct Integrator {
    spec: IntegrationSpec,
    coarse: Arc<GaussLegendre>,
    fine: Option<Arc<GaussLegendre>>,
}

impl Integrator {
    fn new(spec: IntegrationSpec) -> Result<Self, QuadError> {
        spec.validate()?;
        Ok(match spec {
            IntegrationSpec::Fixed { order } => Integrator {
                spec,
                coarse: GaussLegendre::cached(order),
                fine: None,
            },
            IntegrationSpec::Adaptive { order, .. } => Integrator {
                spec,
                coarse: GaussLegendre::cached(order),
                fine: Some(GaussLegendre::cached(2 * order)),
            },
        })
    }

    fn run<T, E, F>(&self, a: f64, b: f64, mut f: F) -> Result<Quadrature<T>, E>
    where
        T: QuadValue,
        F: FnMut(f64) -> Result<T, E>,
    {
        match (self.spec, &self.fine) {
            (IntegrationSpec::Adaptive { rel_tol, abs_tol, max_depth, .. }, Some(fine)) => {
                let out = adaptive::adaptive(&self.coarse, fine, a, b, rel_tol, abs_tol, max_depth, &mut f)?;
                if !out.converged {
                    let n = NONCONVERGED.fetch_add(1, Ordering::Relaxed);
                    if n == 0 {
                        log::warn!("adaptive integration over [{a}, {b}] did not converge");
                    }
                }
                Ok(out)
            }
            _ => Ok(Quadrature {
                value: self.coarse.try_integrate(a, b, f)?,
                converged: true,
            }),
        }
    }
}

/// Integrates a plain closure over [a, b].
pub fn integrate<T, F>(f: F, a: f64, b: f64, spec: IntegrationSpec) -> Result<Quadrature<T>, QuadError>
where
    T: QuadValue,
    F: FnMut(f64) -> T,
{
    let mut f = f;
    let integ = Integrator::new(spec)?;
    Ok(integ
        .run(a, b, |x| Ok::<T, std::convert::Infallible>(f(x)))
        .unwrap_or_else(|e| match e {}))
}

/// FWHM to standard deviation of a gaussian.
pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / (2.0 * (2.0 * LN_2).sqrt())
}

/// Numerator and normalization accumulated in one pass so the weighted
/// average is exactly normalized on the same nodes.
#[derive(Debug, Clone, Copy)]
struct Weighted<T> {
    num: T,
    den: f64,
}

impl<T: QuadValue> Add for Weighted<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Weighted {
            num: self.num + o.num,
            den: self.den + o.den,
        }
    }
}

impl<T: QuadValue> Sub for Weighted<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Weighted {
            num: self.num - o.num,
            den: self.den - o.den,
        }
    }
}

impl<T: QuadValue> Mul<f64> for Weighted<T> {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Weighted {
            num: self.num * s,
            den: self.den * s,
        }
    }
}

impl<T: QuadValue> QuadValue for Weighted<T> {
    fn zero() -> Self {
        Weighted {
            num: T::zero(),
            den: 0.0,
        }
    }
    fn magnitude(&self) -> f64 {
        self.num.magnitude().max(self.den.abs())
    }
}

fn gaussian_average<T, F>(
    integ: &Integrator,
    center: f64,
    sigma: f64,
    span: f64,
    mut f: F,
) -> Result<T, EvalError>
where
    T: QuadValue,
    F: FnMut(f64) -> Result<T, EvalError>,
{
    let half = span * sigma;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let out = integ.run(center - half, center + half, |t| {
        let d = t - center;
        let w = (-d * d * inv).exp();
        Ok::<_, EvalError>(Weighted {
            num: f(t)? * w,
            den: w,
        })
    })?;
    Ok(out.value.num * (1.0 / out.value.den))
}

fn eval_value(e: &Expr, ctx: &EvalCtx) -> Result<Complex64, EvalError> {
    e.eval_complex(ctx)
}

#[derive(Debug)]
struct IntegrateVariable {
    f: Expr,
    var: Variable,
    a: Expr,
    b: Expr,
    integ: Integrator,
}

impl Special for IntegrateVariable {
    fn label(&self) -> String {
        format!("integral d{}", self.var.name())
    }

    fn domain(&self) -> Domain {
        self.f.domain()
    }

    fn children(&self) -> Vec<Expr> {
        vec![self.f.clone(), self.a.clone(), self.b.clone()]
    }

    fn free_variables(&self) -> Vec<Variable> {
        let mut out: Vec<Variable> = self.f.free_variables().into_iter().filter(|v| *v != self.var).collect();
        for v in self.a.free_variables().into_iter().chain(self.b.free_variables()) {
            if !out.contains(&v) {
                out.push(v);
            }
        }
        out
    }

    fn eval_real(&self, ctx: &EvalCtx) -> Result<f64, EvalError> {
        let a = self.a.eval_real(ctx)?;
        let b = self.b.eval_real(ctx)?;
        let mut inner = ctx.clone();
        Ok(self
            .integ
            .run(a, b, |t| {
                inner.bind(&self.var, t);
                self.f.eval_real(&inner)
            })?
            .value)
    }

    fn eval_complex(&self, ctx: &EvalCtx) -> Result<Complex64, EvalError> {
        let a = self.a.eval_real(ctx)?;
        let b = self.b.eval_real(ctx)?;
        let mut inner = ctx.clone();
        Ok(self
            .integ
            .run(a, b, |t| {
                inner.bind(&self.var, t);
                eval_value(&self.f, &inner)
            })?
            .value)
    }
}

/// `g(x...) = ∫_a^b f(v, x...) dv`. The result's variables are `f`'s minus
/// `v`, followed by any variables the limits introduce.
pub fn integrate_variable(
    f: &Functor,
    v: &Variable,
    a: impl Into<Expr>,
    b: impl Into<Expr>,
    spec: IntegrationSpec,
) -> Result<Functor, QuadError> {
    if !f.body().contains_variable(v) {
        return Err(QuadError::NotFree(v.name().to_string()));
    }
    let node = IntegrateVariable {
        f: f.body().clone(),
        var: v.clone(),
        a: a.into(),
        b: b.into(),
        integ: Integrator::new(spec)?,
    };
    let body = Expr::special(Arc::new(node));
    let mut vars: Vec<Variable> = f.variables().iter().filter(|x| *x != v).cloned().collect();
    for x in body.free_variables() {
        if !vars.contains(&x) {
            vars.push(x);
        }
    }
    Ok(Functor::with_variables(format!("{}_int", f.name()), body, vars)?)
}

#[derive(Debug)]
struct AverageParameter {
    f: Expr,
    param: Parameter,
    fwhm: Expr,
    span: f64,
    integ: Integrator,
}

impl AverageParameter {
    fn sigma(&self, ctx: &EvalCtx) -> Result<f64, EvalError> {
        let fwhm = self.fwhm.eval_real(ctx)?;
        if !(fwhm > 0.0) || !fwhm.is_finite() {
            return Err(EvalError::Invalid(format!(
                "averaging over `{}`: fwhm must be positive, got {fwhm}",
                self.param.name()
            )));
        }
        Ok(fwhm_to_sigma(fwhm))
    }
}

impl Special for AverageParameter {
    fn label(&self) -> String {
        format!("average over {}", self.param.name())
    }

    fn domain(&self) -> Domain {
        self.f.domain()
    }

    fn children(&self) -> Vec<Expr> {
        vec![self.f.clone(), Expr::param(&self.param), self.fwhm.clone()]
    }

    fn free_variables(&self) -> Vec<Variable> {
        let mut out = self.f.free_variables();
        for v in self.fwhm.free_variables() {
            if !out.contains(&v) {
                out.push(v);
            }
        }
        out
    }

    fn eval_real(&self, ctx: &EvalCtx) -> Result<f64, EvalError> {
        let sigma = self.sigma(ctx)?;
        let center = ctx.param(&self.param);
        gaussian_average(&self.integ, center, sigma, self.span, |t| {
            self.f.eval_real(&ctx.with_param(&self.param, t))
        })
    }

    fn eval_complex(&self, ctx: &EvalCtx) -> Result<Complex64, EvalError> {
        let sigma = self.sigma(ctx)?;
        let center = ctx.param(&self.param);
        gaussian_average(&self.integ, center, sigma, self.span, |t| {
            eval_value(&self.f, &ctx.with_param(&self.param, t))
        })
    }
}

/// Gaussian average of `f` over parameter `p`, centred on `p`'s current
/// effective value and truncated at `±span_sigmas·σ`. The parameter itself is
/// never modified; substitution happens in the evaluation context only.
pub fn average_parameter(
    f: &Functor,
    p: &Parameter,
    fwhm: impl Into<Expr>,
    spec: IntegrationSpec,
    span_sigmas: f64,
) -> Result<Functor, QuadError> {
    if !f.body().contains_parameter(p) {
        return Err(QuadError::ParameterNotReachable(p.name()));
    }
    if !(span_sigmas > 0.0) {
        return Err(QuadError::InvalidSpan(span_sigmas));
    }
    let node = AverageParameter {
        f: f.body().clone(),
        param: p.clone(),
        fwhm: fwhm.into(),
        span: span_sigmas,
        integ: Integrator::new(spec)?,
    };
    let body = Expr::special(Arc::new(node));
    let mut vars = f.variables().to_vec();
    for x in body.free_variables() {
        if !vars.contains(&x) {
            vars.push(x);
        }
    }
    Ok(Functor::with_variables(format!("{}_avg", f.name()), body, vars)?)
}

#[derive(Debug)]
struct ConvolveVariable {
    f: Expr,
    var: Variable,
    fwhm: Expr,
    span: f64,
    integ: Integrator,
}

impl ConvolveVariable {
    fn window(&self, ctx: &EvalCtx) -> Result<(f64, f64), EvalError> {
        let center = ctx.var(&self.var)?;
        let fwhm = self.fwhm.eval_real(ctx)?;
        if !(fwhm > 0.0) || !fwhm.is_finite() {
            return Err(EvalError::Invalid(format!(
                "resolution along `{}` at {center}: fwhm must be positive, got {fwhm}",
                self.var.name()
            )));
        }
        Ok((center, fwhm_to_sigma(fwhm)))
    }
}

impl Special for ConvolveVariable {
    fn label(&self) -> String {
        format!("resolution along {}", self.var.name())
    }

    fn domain(&self) -> Domain {
        self.f.domain()
    }

    fn children(&self) -> Vec<Expr> {
        vec![self.f.clone(), self.fwhm.clone()]
    }

    fn free_variables(&self) -> Vec<Variable> {
        let mut out = self.f.free_variables();
        for v in self.fwhm.free_variables().into_iter().chain([self.var.clone()]) {
            if !out.contains(&v) {
                out.push(v);
            }
        }
        out
    }

    fn eval_real(&self, ctx: &EvalCtx) -> Result<f64, EvalError> {
        let (center, sigma) = self.window(ctx)?;
        let mut inner = ctx.clone();
        gaussian_average(&self.integ, center, sigma, self.span, |t| {
            inner.bind(&self.var, t);
            self.f.eval_real(&inner)
        })
    }

    fn eval_complex(&self, ctx: &EvalCtx) -> Result<Complex64, EvalError> {
        let (center, sigma) = self.window(ctx)?;
        let mut inner = ctx.clone();
        gaussian_average(&self.integ, center, sigma, self.span, |t| {
            inner.bind(&self.var, t);
            eval_value(&self.f, &inner)
        })
    }
}

/// Normalized gaussian smearing of `f` along `v`; the width at each point is
/// `fwhm` evaluated there, so it may vary with `v`.
pub fn convolve_variable(
    f: &Functor,
    v: &Variable,
    fwhm: impl Into<Expr>,
    spec: IntegrationSpec,
    span_sigmas: f64,
) -> Result<Functor, QuadError> {
    if !(span_sigmas > 0.0) {
        return Err(QuadError::InvalidSpan(span_sigmas));
    }
    let node = ConvolveVariable {
        f: f.body().clone(),
        var: v.clone(),
        fwhm: fwhm.into(),
        span: span_sigmas,
        integ: Integrator::new(spec)?,
    };
    let body = Expr::special(Arc::new(node));
    let mut vars = f.variables().to_vec();
    for x in body.free_variables() {
        if !vars.contains(&x) {
            vars.push(x);
        }
    }
    Ok(Functor::with_variables(format!("{}_res", f.name()), body, vars)?)
}

/// Normalization of a gaussian truncated at `±span` standard deviations,
/// relative to the untruncated one.
pub fn truncated_gaussian_mass(span: f64) -> f64 {
    libm::erf(span / 2f64.sqrt())
}

#[allow(dead_code)]
fn gaussian_pdf(x: f64, sigma: f64) -> f64 {
    (-x * x / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * PI).sqrt())
}
