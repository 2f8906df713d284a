//! Parameter/variable expression graph.
//!
//! Independent [`Parameter`]s and [`Variable`]s are the leaves; arithmetic,
//! standard math functions and [`Special`] nodes (integrals, reflectivity,
//! form factors) build on them. Nodes are shared by reference, so mutating a
//! parameter changes every expression that contains it. Evaluation is eager
//! and uncached.

mod eval;
mod functor;
mod node;
mod param;
mod parse;

use thiserror::Error;

pub use eval::{EvalCtx, Overrides};
pub use functor::{Functor, Values, MAX_VARIABLES};
pub use node::{
    abs, acos, arg, asin, atan, complex, conj, cos, cosh, erf, exp, im, log, log10, norm, pow, re,
    sign, sin, sinc, sinc_fn, sinh, sqrt, tan, tanh, BinaryOp, Domain, Expr, NodeKind, Special,
    UnaryOp,
};
pub use param::{ParamBuilder, ParamState, Parameter, Variable};
pub use parse::{parse, referenced_names, Binding, Env, ParseError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("parameter `{name}`: value {value} outside bounds [{lo}, {hi}]")]
    OutOfBounds { name: String, value: f64, lo: f64, hi: f64 },
    #[error("parameter `{name}`: invalid bounds [{lo}, {hi}]")]
    InvalidBounds { name: String, lo: f64, hi: f64 },
    #[error("parameter `{name}`: scale must be finite and non-zero")]
    ZeroScale { name: String },
    #[error("parameter `{name}`: non-finite value {value}")]
    NonFiniteValue { name: String, value: f64 },
    #[error("functor has {0} variables, at most 5 are supported")]
    TooManyVariables(usize),
    #[error("variable `{0}` listed twice")]
    DuplicateVariable(String),
    #[error("variable `{0}` is used but not declared")]
    UndeclaredVariable(String),
    #[error("`{0}` does not accept complex operands")]
    ComplexOperand(&'static str),
}

/// Failures raised while evaluating an expression. Numerical domain faults
/// (log of a negative number, 0/0) are not errors; they yield NaN/inf.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("variable `{0}` is not bound")]
    UnboundVariable(String),
    #[error("expected {expected} coordinate arrays, got {got}")]
    MissingVariables { expected: usize, got: usize },
    #[error("coordinate arrays differ in length")]
    LengthMismatch,
    #[error("functor returns complex values")]
    ComplexResult,
    #[error("{0}")]
    Invalid(String),
}
