use num_complex::Complex64;
use rayon::prelude::*;

use super::{Domain, EvalCtx, EvalError, Expr, ExprError, Overrides, Parameter, Variable};

/// Maximum number of free variables a functor may have.
pub const MAX_VARIABLES: usize = 5;

// below this many points evaluation stays on the calling thread
const PARALLEL_THRESHOLD: usize = 512;

/// Values produced by evaluating a functor.
#[derive(Debug, Clone, PartialEq)]
pub enum Values {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl Values {
    pub fn len(&self) -> usize {
        match self {
            Values::Real(v) => v.len(),
            Values::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Real values; the real part of complex ones.
    pub fn real(&self) -> Vec<f64> {
        match self {
            Values::Real(v) => v.clone(),
            Values::Complex(v) => v.iter().map(|z| z.re).collect(),
        }
    }

    pub fn into_real(self) -> Result<Vec<f64>, EvalError> {
        match self {
            Values::Real(v) => Ok(v),
            Values::Complex(_) => Err(EvalError::ComplexResult),
        }
    }

    pub fn into_complex(self) -> Vec<Complex64> {
        match self {
            Values::Real(v) => v.into_iter().map(|x| Complex64::new(x, 0.0)).collect(),
            Values::Complex(v) => v,
        }
    }
}

/// An expression of up to five ordered variables, callable on coordinate arrays.
#[derive(Debug, Clone)]
pub struct Functor {
    name: String,
    body: Expr,
    vars: Vec<Variable>,
}

impl Functor {
    /// Functor whose variables are the free variables of `body`, in order of
    /// first appearance.
    pub fn new(name: impl Into<String>, body: impl Into<Expr>) -> Result<Functor, ExprError> {
        let body = body.into();
        let vars = body.free_variables();
        Functor::with_variables(name, body, vars)
    }

    /// Functor with an explicit variable order. Variables listed but not used
    /// by the body are allowed (the functor is constant along them).
    pub fn with_variables(
        name: impl Into<String>,
        body: impl Into<Expr>,
        vars: Vec<Variable>,
    ) -> Result<Functor, ExprError> {
        let body = body.into();
        if vars.len() > MAX_VARIABLES {
            return Err(ExprError::TooManyVariables(vars.len()));
        }
        for (i, v) in vars.iter().enumerate() {
            if vars[..i].contains(v) {
                return Err(ExprError::DuplicateVariable(v.name().to_string()));
            }
        }
        for v in body.free_variables() {
            if !vars.contains(&v) {
                return Err(ExprError::UndeclaredVariable(v.name().to_string()));
            }
        }
        Ok(Functor {
            name: name.into(),
            body,
            vars,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn body(&self) -> &Expr {
        &self.body
    }

    pub fn variables(&self) -> &[Variable] {
        &self.vars
    }

    pub fn arity(&self) -> usize {
        self.vars.len()
    }

    pub fn domain(&self) -> Domain {
        self.body.domain()
    }

    pub fn is_complex(&self) -> bool {
        self.body.is_complex()
    }

    pub fn free_parameters(&self) -> Vec<Parameter> {
        self.body.free_parameters()
    }

    pub fn parameters(&self) -> Vec<Parameter> {
        self.body.parameters()
    }

    /// Evaluates at `coords[k][i]` for every point `i`, one array per variable.
    pub fn evaluate(&self, coords: &[&[f64]]) -> Result<Values, EvalError> {
        self.evaluate_with(coords, &Overrides::new())
    }

    pub fn evaluate_with(&self, coords: &[&[f64]], overrides: &Overrides) -> Result<Values, EvalError> {
        let n = self.check_coords(coords)?;
        let point = |i: usize| {
            let mut ctx = EvalCtx::new(overrides);
            for (v, c) in self.vars.iter().zip(coords) {
                ctx.bind(v, c[i]);
            }
            ctx
        };
        if self.is_complex() {
            let f = |i| self.body.eval_complex(&point(i));
            let out: Result<Vec<_>, _> = if n >= PARALLEL_THRESHOLD {
                (0..n).into_par_iter().map(f).collect()
            } else {
                (0..n).map(f).collect()
            };
            out.map(Values::Complex)
        } else {
            let f = |i| self.body.eval_real(&point(i));
            let out: Result<Vec<_>, _> = if n >= PARALLEL_THRESHOLD {
                (0..n).into_par_iter().map(f).collect()
            } else {
                (0..n).map(f).collect()
            };
            out.map(Values::Real)
        }
    }

    pub fn evaluate_real(&self, coords: &[&[f64]]) -> Result<Vec<f64>, EvalError> {
        self.evaluate(coords)?.into_real()
    }

    /// Single-point evaluation.
    pub fn call(&self, point: &[f64]) -> Result<Complex64, EvalError> {
        let ov = Overrides::new();
        self.call_with(point, &ov)
    }

    pub fn call_with(&self, point: &[f64], overrides: &Overrides) -> Result<Complex64, EvalError> {
        if point.len() != self.vars.len() {
            return Err(EvalError::MissingVariables {
                expected: self.vars.len(),
                got: point.len(),
            });
        }
        let mut ctx = EvalCtx::new(overrides);
        for (v, &x) in self.vars.iter().zip(point) {
            ctx.bind(v, x);
        }
        self.body.eval_complex(&ctx)
    }

    fn check_coords(&self, coords: &[&[f64]]) -> Result<usize, EvalError> {
        if coords.len() != self.vars.len() {
            return Err(EvalError::MissingVariables {
                expected: self.vars.len(),
                got: coords.len(),
            });
        }
        let n = coords.first().map_or(1, |c| c.len());
        if coords.iter().any(|c| c.len() != n) {
            return Err(EvalError::LengthMismatch);
        }
        Ok(n)
    }
}

impl From<&Functor> for Expr {
    fn from(f: &Functor) -> Expr {
        f.body.clone()
    }
}

impl From<Functor> for Expr {
    fn from(f: Functor) -> Expr {
        f.body
    }
}
