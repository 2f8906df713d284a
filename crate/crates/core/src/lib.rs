pub mod expr;
pub mod fit;
pub mod data;
pub mod model;
pub mod potential;
pub mod quad;
pub mod reflect;

pub use expr::{Expr, Functor, Parameter, Variable};
