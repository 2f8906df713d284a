use std::collections::HashSet;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use num_complex::Complex64;

use super::{EvalCtx, EvalError, ExprError, Parameter, Variable};

/// Value domain of an expression node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Real,
    Complex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Tan,
    Asin,
    Acos,
    Atan,
    Sinh,
    Cosh,
    Tanh,
    Exp,
    Log,
    Log10,
    Sqrt,
    Abs,
    /// `|z|^2`
    Norm,
    Arg,
    Conj,
    Re,
    Im,
    Sinc,
    Erf,
    Sign,
}

impl UnaryOp {
    pub const ALL: [UnaryOp; 23] = [
        UnaryOp::Neg,
        UnaryOp::Sin,
        UnaryOp::Cos,
        UnaryOp::Tan,
        UnaryOp::Asin,
        UnaryOp::Acos,
        UnaryOp::Atan,
        UnaryOp::Sinh,
        UnaryOp::Cosh,
        UnaryOp::Tanh,
        UnaryOp::Exp,
        UnaryOp::Log,
        UnaryOp::Log10,
        UnaryOp::Sqrt,
        UnaryOp::Abs,
        UnaryOp::Norm,
        UnaryOp::Arg,
        UnaryOp::Conj,
        UnaryOp::Re,
        UnaryOp::Im,
        UnaryOp::Sinc,
        UnaryOp::Erf,
        UnaryOp::Sign,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "neg",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Tan => "tan",
            UnaryOp::Asin => "asin",
            UnaryOp::Acos => "acos",
            UnaryOp::Atan => "atan",
            UnaryOp::Sinh => "sinh",
            UnaryOp::Cosh => "cosh",
            UnaryOp::Tanh => "tanh",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Log10 => "log10",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Abs => "abs",
            UnaryOp::Norm => "norm",
            UnaryOp::Arg => "arg",
            UnaryOp::Conj => "conj",
            UnaryOp::Re => "re",
            UnaryOp::Im => "im",
            UnaryOp::Sinc => "sinc",
            UnaryOp::Erf => "erf",
            UnaryOp::Sign => "sign",
        }
    }

    pub fn from_name(name: &str) -> Option<UnaryOp> {
        UnaryOp::ALL
            .iter()
            .copied()
            .find(|op| op.name() == name && *op != UnaryOp::Neg)
    }

    fn result_domain(self, arg: Domain) -> Result<Domain, ExprError> {
        use UnaryOp::*;
        match self {
            Re | Im | Abs | Norm | Arg => Ok(Domain::Real),
            Erf | Sign if arg == Domain::Complex => Err(ExprError::ComplexOperand(self.name())),
            _ => Ok(arg),
        }
    }

    fn apply_real(self, x: f64) -> f64 {
        use UnaryOp::*;
        match self {
            Neg => -x,
            Sin => x.sin(),
            Cos => x.cos(),
            Tan => x.tan(),
            Asin => x.asin(),
            Acos => x.acos(),
            Atan => x.atan(),
            Sinh => x.sinh(),
            Cosh => x.cosh(),
            Tanh => x.tanh(),
            Exp => x.exp(),
            Log => x.ln(),
            Log10 => x.log10(),
            Sqrt => x.sqrt(),
            Abs => x.abs(),
            Norm => x * x,
            Arg => {
                if x < 0.0 {
                    std::f64::consts::PI
                } else {
                    0.0
                }
            }
            Conj | Re => x,
            Im => 0.0,
            Sinc => sinc(x),
            Erf => libm::erf(x),
            Sign => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn apply_complex(self, z: Complex64) -> Complex64 {
        use UnaryOp::*;
        match self {
            Neg => -z,
            Sin => z.sin(),
            Cos => z.cos(),
            Tan => z.tan(),
            Asin => z.asin(),
            Acos => z.acos(),
            Atan => z.atan(),
            Sinh => z.sinh(),
            Cosh => z.cosh(),
            Tanh => z.tanh(),
            Exp => z.exp(),
            Log => z.ln(),
            Log10 => z.log10(),
            Sqrt => z.sqrt(),
            Abs => Complex64::new(z.norm(), 0.0),
            Norm => Complex64::new(z.norm_sqr(), 0.0),
            Arg => Complex64::new(z.arg(), 0.0),
            Conj => z.conj(),
            Re => Complex64::new(z.re, 0.0),
            Im => Complex64::new(z.im, 0.0),
            Sinc => {
                if z.norm() < 1e-8 {
                    Complex64::new(1.0, 0.0) - z * z / 6.0
                } else {
                    z.sin() / z
                }
            }
            // rejected at construction
            Erf | Sign => Complex64::new(f64::NAN, f64::NAN),
        }
    }
}

/// `sin(x)/x` with the removable singularity filled in.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 * (1.0 - x2 / 20.0)
    } else {
        x.sin() / x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    /// `complex(re, im)`, both operands real.
    Complex,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "pow",
            BinaryOp::Complex => "complex",
        }
    }

    fn apply_real(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
            BinaryOp::Pow => real_pow(a, b),
            BinaryOp::Complex => unreachable!("complex() has a complex result"),
        }
    }

    fn apply_complex(self, a: Complex64, b: Complex64) -> Complex64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
            BinaryOp::Pow => {
                if b.im == 0.0 && b.re.fract() == 0.0 && b.re.abs() <= i32::MAX as f64 {
                    a.powi(b.re as i32)
                } else if a == Complex64::new(0.0, 0.0) {
                    if b.re > 0.0 {
                        Complex64::new(0.0, 0.0)
                    } else {
                        Complex64::new(f64::NAN, f64::NAN)
                    }
                } else {
                    a.powc(b)
                }
            }
            BinaryOp::Complex => Complex64::new(a.re, b.re),
        }
    }
}

fn real_pow(a: f64, b: f64) -> f64 {
    if b.fract() == 0.0 && b.abs() <= i32::MAX as f64 {
        a.powi(b as i32)
    } else {
        // negative base with non-integer exponent is NaN in the real domain
        a.powf(b)
    }
}

/// A node with custom evaluation: integrals, reflectivity, form factors.
pub trait Special: Send + Sync + fmt::Debug {
    /// Short label used when printing the graph.
    fn label(&self) -> String;

    fn domain(&self) -> Domain;

    /// Sub-expressions the node depends on (used for parameter discovery).
    fn children(&self) -> Vec<Expr>;

    /// Variables the node's value depends on, after binding its own
    /// integration variables.
    fn free_variables(&self) -> Vec<Variable>;

    fn eval_real(&self, ctx: &EvalCtx) -> Result<f64, EvalError> {
        Ok(self.eval_complex(ctx)?.re)
    }

    fn eval_complex(&self, ctx: &EvalCtx) -> Result<Complex64, EvalError>;
}

#[derive(Debug, Clone)]
pub enum NodeKind {
    Const(Complex64),
    Param(Parameter),
    Var(Variable),
    Unary(UnaryOp, Expr),
    Binary(BinaryOp, Expr, Expr),
    Special(Arc<dyn Special>),
}

#[derive(Debug)]
pub struct Node {
    kind: NodeKind,
    domain: Domain,
}

/// Shared, immutable node of the expression graph. Parameters inside are
/// referenced, so later parameter mutations are seen by every expression
/// that contains them.
#[derive(Clone, Debug)]
pub struct Expr(Arc<Node>);

impl Expr {
    pub fn constant(value: f64) -> Expr {
        Expr(Arc::new(Node {
            kind: NodeKind::Const(Complex64::new(value, 0.0)),
            domain: Domain::Real,
        }))
    }

    pub fn complex_constant(value: Complex64) -> Expr {
        Expr(Arc::new(Node {
            kind: NodeKind::Const(value),
            domain: Domain::Complex,
        }))
    }

    pub fn param(p: &Parameter) -> Expr {
        Expr(Arc::new(Node {
            kind: NodeKind::Param(p.clone()),
            domain: Domain::Real,
        }))
    }

    pub fn var(v: &Variable) -> Expr {
        Expr(Arc::new(Node {
            kind: NodeKind::Var(v.clone()),
            domain: Domain::Real,
        }))
    }

    pub fn special(s: Arc<dyn Special>) -> Expr {
        let domain = s.domain();
        Expr(Arc::new(Node {
            kind: NodeKind::Special(s),
            domain,
        }))
    }

    pub fn unary(op: UnaryOp, arg: impl Into<Expr>) -> Result<Expr, ExprError> {
        let arg = arg.into();
        let domain = op.result_domain(arg.domain())?;
        Ok(Expr(Arc::new(Node {
            kind: NodeKind::Unary(op, arg),
            domain,
        })))
    }

    pub fn binary(op: BinaryOp, a: impl Into<Expr>, b: impl Into<Expr>) -> Result<Expr, ExprError> {
        let (a, b) = (a.into(), b.into());
        let domain = match op {
            BinaryOp::Complex => {
                if a.is_complex() || b.is_complex() {
                    return Err(ExprError::ComplexOperand("complex"));
                }
                Domain::Complex
            }
            _ if a.is_complex() || b.is_complex() => Domain::Complex,
            _ => Domain::Real,
        };
        let e = Expr(Arc::new(Node {
            kind: NodeKind::Binary(op, a, b),
            domain,
        }));
        Ok(e)
    }

    fn binary_unchecked(op: BinaryOp, a: Expr, b: Expr) -> Expr {
        Expr::binary(op, a, b).expect("arithmetic operators accept every domain")
    }

    pub fn kind(&self) -> &NodeKind {
        &self.0.kind
    }

    pub fn domain(&self) -> Domain {
        self.0.domain
    }

    pub fn is_complex(&self) -> bool {
        self.0.domain == Domain::Complex
    }

    pub fn ptr_eq(&self, other: &Expr) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    fn node_key(&self) -> usize {
        Arc::as_ptr(&self.0) as *const () as usize
    }

    /// Evaluates a real-domain node. Complex nodes yield their real part.
    pub fn eval_real(&self, ctx: &EvalCtx) -> Result<f64, EvalError> {
        match &self.0.kind {
            NodeKind::Const(c) => Ok(c.re),
            NodeKind::Param(p) => Ok(ctx.param(p)),
            NodeKind::Var(v) => ctx.var(v),
            NodeKind::Unary(op, a) => {
                if a.is_complex() {
                    Ok(op.apply_complex(a.eval_complex(ctx)?).re)
                } else {
                    Ok(op.apply_real(a.eval_real(ctx)?))
                }
            }
            NodeKind::Binary(op, a, b) => {
                if self.is_complex() {
                    Ok(self.eval_complex(ctx)?.re)
                } else {
                    Ok(op.apply_real(a.eval_real(ctx)?, b.eval_real(ctx)?))
                }
            }
            NodeKind::Special(s) => {
                if s.domain() == Domain::Real {
                    s.eval_real(ctx)
                } else {
                    Ok(s.eval_complex(ctx)?.re)
                }
            }
        }
    }

    pub fn eval_complex(&self, ctx: &EvalCtx) -> Result<Complex64, EvalError> {
        if self.0.domain == Domain::Real {
            return Ok(Complex64::new(self.eval_real(ctx)?, 0.0));
        }
        match &self.0.kind {
            NodeKind::Const(c) => Ok(*c),
            NodeKind::Param(_) | NodeKind::Var(_) => unreachable!("leaves are real"),
            NodeKind::Unary(op, a) => Ok(op.apply_complex(a.eval_complex(ctx)?)),
            NodeKind::Binary(op, a, b) => Ok(op.apply_complex(a.eval_complex(ctx)?, b.eval_complex(ctx)?)),
            NodeKind::Special(s) => s.eval_complex(ctx),
        }
    }

    /// Value of a variable-free expression with the stored parameter values.
    pub fn value(&self) -> Result<f64, EvalError> {
        let ov = super::Overrides::new();
        self.eval_real(&EvalCtx::new(&ov))
    }

    /// Every independent parameter reachable from this node, in order of
    /// first appearance, fixed ones included.
    pub fn parameters(&self) -> Vec<Parameter> {
        let mut seen_nodes = HashSet::new();
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        self.collect_params(&mut seen_nodes, &mut seen, &mut out);
        out
    }

    /// Independent, non-fixed parameters reachable from this node.
    pub fn free_parameters(&self) -> Vec<Parameter> {
        self.parameters().into_iter().filter(|p| !p.is_fixed()).collect()
    }

    fn collect_params(
        &self,
        seen_nodes: &mut HashSet<usize>,
        seen: &mut HashSet<u64>,
        out: &mut Vec<Parameter>,
    ) {
        if !seen_nodes.insert(self.node_key()) {
            return;
        }
        match &self.0.kind {
            NodeKind::Const(_) | NodeKind::Var(_) => {}
            NodeKind::Param(p) => {
                if seen.insert(p.id()) {
                    out.push(p.clone());
                }
            }
            NodeKind::Unary(_, a) => a.collect_params(seen_nodes, seen, out),
            NodeKind::Binary(_, a, b) => {
                a.collect_params(seen_nodes, seen, out);
                b.collect_params(seen_nodes, seen, out);
            }
            NodeKind::Special(s) => {
                for c in s.children() {
                    c.collect_params(seen_nodes, seen, out);
                }
            }
        }
    }

    /// Variables this expression depends on, in order of first appearance.
    pub fn free_variables(&self) -> Vec<Variable> {
        let mut seen_nodes = HashSet::new();
        let mut out = Vec::new();
        self.collect_vars(&mut seen_nodes, &mut out);
        out
    }

    fn collect_vars(&self, seen_nodes: &mut HashSet<usize>, out: &mut Vec<Variable>) {
        if !seen_nodes.insert(self.node_key()) {
            return;
        }
        match &self.0.kind {
            NodeKind::Const(_) | NodeKind::Param(_) => {}
            NodeKind::Var(v) => push_unique(out, v),
            NodeKind::Unary(_, a) => a.collect_vars(seen_nodes, out),
            NodeKind::Binary(_, a, b) => {
                a.collect_vars(seen_nodes, out);
                b.collect_vars(seen_nodes, out);
            }
            NodeKind::Special(s) => {
                for v in s.free_variables() {
                    push_unique(out, &v);
                }
            }
        }
    }

    pub fn contains_variable(&self, v: &Variable) -> bool {
        self.free_variables().contains(v)
    }

    pub fn contains_parameter(&self, p: &Parameter) -> bool {
        self.parameters().contains(p)
    }
}

fn push_unique(out: &mut Vec<Variable>, v: &Variable) {
    if !out.contains(v) {
        out.push(v.clone());
    }
}

impl From<f64> for Expr {
    fn from(v: f64) -> Expr {
        Expr::constant(v)
    }
}

impl From<i32> for Expr {
    fn from(v: i32) -> Expr {
        Expr::constant(v as f64)
    }
}

impl From<Complex64> for Expr {
    fn from(v: Complex64) -> Expr {
        Expr::complex_constant(v)
    }
}

impl From<&Expr> for Expr {
    fn from(e: &Expr) -> Expr {
        e.clone()
    }
}

impl From<Parameter> for Expr {
    fn from(p: Parameter) -> Expr {
        Expr::param(&p)
    }
}

impl From<&Parameter> for Expr {
    fn from(p: &Parameter) -> Expr {
        Expr::param(p)
    }
}

impl From<Variable> for Expr {
    fn from(v: Variable) -> Expr {
        Expr::var(&v)
    }
}

impl From<&Variable> for Expr {
    fn from(v: &Variable) -> Expr {
        Expr::var(v)
    }
}

macro_rules! arith_impls {
    ($($ty:ty),*) => {$(
        impl<T: Into<Expr>> Add<T> for $ty {
            type Output = Expr;
            fn add(self, rhs: T) -> Expr {
                Expr::binary_unchecked(BinaryOp::Add, self.into(), rhs.into())
            }
        }
        impl<T: Into<Expr>> Sub<T> for $ty {
            type Output = Expr;
            fn sub(self, rhs: T) -> Expr {
                Expr::binary_unchecked(BinaryOp::Sub, self.into(), rhs.into())
            }
        }
        impl<T: Into<Expr>> Mul<T> for $ty {
            type Output = Expr;
            fn mul(self, rhs: T) -> Expr {
                Expr::binary_unchecked(BinaryOp::Mul, self.into(), rhs.into())
            }
        }
        impl<T: Into<Expr>> Div<T> for $ty {
            type Output = Expr;
            fn div(self, rhs: T) -> Expr {
                Expr::binary_unchecked(BinaryOp::Div, self.into(), rhs.into())
            }
        }
        impl Neg for $ty {
            type Output = Expr;
            fn neg(self) -> Expr {
                Expr::unary(UnaryOp::Neg, self).expect("negation accepts every domain")
            }
        }
    )*};
}

arith_impls!(Expr, &Expr, Parameter, &Parameter, Variable, &Variable);

macro_rules! scalar_lhs_impls {
    ($($rhs:ty),*) => {$(
        impl Add<$rhs> for f64 {
            type Output = Expr;
            fn add(self, rhs: $rhs) -> Expr {
                Expr::binary_unchecked(BinaryOp::Add, self.into(), rhs.into())
            }
        }
        impl Sub<$rhs> for f64 {
            type Output = Expr;
            fn sub(self, rhs: $rhs) -> Expr {
                Expr::binary_unchecked(BinaryOp::Sub, self.into(), rhs.into())
            }
        }
        impl Mul<$rhs> for f64 {
            type Output = Expr;
            fn mul(self, rhs: $rhs) -> Expr {
                Expr::binary_unchecked(BinaryOp::Mul, self.into(), rhs.into())
            }
        }
        impl Div<$rhs> for f64 {
            type Output = Expr;
            fn div(self, rhs: $rhs) -> Expr {
                Expr::binary_unchecked(BinaryOp::Div, self.into(), rhs.into())
            }
        }
    )*};
}

scalar_lhs_impls!(Expr, &Expr, Parameter, &Parameter, Variable, &Variable);

pub fn pow(base: impl Into<Expr>, exponent: impl Into<Expr>) -> Expr {
    Expr::binary_unchecked(BinaryOp::Pow, base.into(), exponent.into())
}

/// `re + i*im` from two real expressions.
pub fn complex(re: impl Into<Expr>, im: impl Into<Expr>) -> Result<Expr, ExprError> {
    Expr::binary(BinaryOp::Complex, re, im)
}

macro_rules! unary_fns {
    ($($name:ident => $op:ident),* $(,)?) => {$(
        pub fn $name(x: impl Into<Expr>) -> Expr {
            Expr::unary(UnaryOp::$op, x).expect("operator accepts complex operands")
        }
    )*};
}

unary_fns!(
    sin => Sin, cos => Cos, tan => Tan, asin => Asin, acos => Acos, atan => Atan,
    sinh => Sinh, cosh => Cosh, tanh => Tanh, exp => Exp, log => Log, log10 => Log10,
    sqrt => Sqrt, abs => Abs, norm => Norm, arg => Arg, conj => Conj, re => Re, im => Im,
    sinc_fn => Sinc,
);

/// Error function; real operands only.
pub fn erf(x: impl Into<Expr>) -> Result<Expr, ExprError> {
    Expr::unary(UnaryOp::Erf, x)
}

pub fn sign(x: impl Into<Expr>) -> Result<Expr, ExprError> {
    Expr::unary(UnaryOp::Sign, x)
}

pub(crate) fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn write_name(f: &mut fmt::Formatter<'_>, name: &str) -> fmt::Result {
    if is_identifier(name) {
        f.write_str(name)
    } else {
        write!(f, "`{name}`")
    }
}

fn write_real(f: &mut fmt::Formatter<'_>, x: f64) -> fmt::Result {
    if x.is_nan() {
        f.write_str("(0/0)")
    } else if x.is_infinite() {
        f.write_str(if x > 0.0 { "(1/0)" } else { "(-1/0)" })
    } else if x < 0.0 || (x == 0.0 && x.is_sign_negative()) {
        write!(f, "(-{:?})", -x)
    } else {
        write!(f, "{x:?}")
    }
}

/// Prints in the grammar accepted by [`parse`](super::parse); special nodes
/// print as `<label>` and do not round-trip.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.0.kind {
            NodeKind::Const(c) => {
                if self.is_complex() {
                    f.write_str("complex(")?;
                    write_real(f, c.re)?;
                    f.write_str(", ")?;
                    write_real(f, c.im)?;
                    f.write_str(")")
                } else {
                    write_real(f, c.re)
                }
            }
            NodeKind::Param(p) => write_name(f, &p.name()),
            NodeKind::Var(v) => write_name(f, v.name()),
            NodeKind::Unary(UnaryOp::Neg, a) => write!(f, "(-{a})"),
            NodeKind::Unary(op, a) => write!(f, "{}({a})", op.name()),
            NodeKind::Binary(op @ (BinaryOp::Pow | BinaryOp::Complex), a, b) => {
                write!(f, "{}({a}, {b})", op.symbol())
            }
            NodeKind::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            NodeKind::Special(s) => write!(f, "<{}>", s.label()),
        }
    }
}
