//! Positioned shapes with SLD amplitudes, their form factors, lattice
//! factors and small-angle intensity.
//!
//! Overlapping terms are not detected; their amplitudes simply add.

mod mesh;

use std::sync::Arc;

use num_complex::Complex64;
use thiserror::Error;

use crate::expr::{sinc, Domain, EvalCtx, EvalError, Expr, ExprError, Functor, Special, Variable};
use crate::reflect::Material;

pub use mesh::{MeshError, Polyhedron, V3};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PotentialError {
    #[error("potentials are defined over different variables")]
    VariableMismatch,
    #[error("lattice count must be at least 1")]
    LatticeCount,
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

pub type Position = [Expr; 3];

/// Position from three coordinate expressions.
pub fn pos(x: impl Into<Expr>, y: impl Into<Expr>, z: impl Into<Expr>) -> Position {
    [x.into(), y.into(), z.into()]
}

#[derive(Debug, Clone)]
pub enum Shape {
    /// Centred on each position.
    Box { wx: Expr, wy: Expr, wz: Expr },
    /// Vertices are offset by each position.
    Polyhedron(Arc<Polyhedron>),
}

#[derive(Debug, Clone)]
pub struct Term {
    pub coef: Expr,
    pub shape: Shape,
    pub sld_re: Expr,
    pub sld_im: Expr,
    pub positions: Vec<Position>,
}

#[derive(Debug, Clone)]
pub struct Potential {
    vars: [Variable; 3],
    terms: Vec<Term>,
}

impl Potential {
    pub fn variables(&self) -> &[Variable; 3] {
        &self.vars
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    fn check(&self, other: &Potential) -> Result<(), PotentialError> {
        if self.vars == other.vars {
            Ok(())
        } else {
            Err(PotentialError::VariableMismatch)
        }
    }

    pub fn try_add(&self, other: &Potential) -> Result<Potential, PotentialError> {
        self.check(other)?;
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Ok(Potential {
            vars: self.vars.clone(),
            terms,
        })
    }

    pub fn try_sub(&self, other: &Potential) -> Result<Potential, PotentialError> {
        self.try_add(&other.scaled(-1.0))
    }

    pub fn scaled(&self, alpha: impl Into<Expr>) -> Potential {
        let alpha = alpha.into();
        Potential {
            vars: self.vars.clone(),
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    coef: alpha.clone() * &t.coef,
                    ..t.clone()
                })
                .collect(),
        }
    }

    /// Every expression the potential depends on.
    pub fn exprs(&self) -> Vec<Expr> {
        let mut out = Vec::new();
        for t in &self.terms {
            out.push(t.coef.clone());
            out.push(t.sld_re.clone());
            out.push(t.sld_im.clone());
            if let Shape::Box { wx, wy, wz } = &t.shape {
                out.extend([wx.clone(), wy.clone(), wz.clone()]);
            }
            for p in &t.positions {
                out.extend(p.iter().cloned());
            }
        }
        out
    }

    /// Fourier transform `∫ V(r) exp(i q·r) d³r` with expressions evaluated
    /// in `ctx`.
    pub fn transform_ctx(&self, q: V3, ctx: &EvalCtx) -> Result<Complex64, EvalError> {
        let mut total = Complex64::new(0.0, 0.0);
        for t in &self.terms {
            let coef = t.coef.eval_real(ctx)?;
            let rho = Complex64::new(t.sld_re.eval_real(ctx)?, t.sld_im.eval_real(ctx)?);
            let shape = match &t.shape {
                Shape::Box { wx, wy, wz } => {
                    let w = [wx.eval_real(ctx)?, wy.eval_real(ctx)?, wz.eval_real(ctx)?];
                    if w.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
                        return Err(EvalError::Invalid(format!("box widths must be positive, got {w:?}")));
                    }
                    Complex64::new(
                        w[0] * w[1] * w[2] * sinc(0.5 * q[0] * w[0]) * sinc(0.5 * q[1] * w[1]) * sinc(0.5 * q[2] * w[2]),
                        0.0,
                    )
                }
                Shape::Polyhedron(p) => p.form_factor(q),
            };
            let mut phase = Complex64::new(0.0, 0.0);
            for p in &t.positions {
                let r = [p[0].eval_real(ctx)?, p[1].eval_real(ctx)?, p[2].eval_real(ctx)?];
                phase += Complex64::from_polar(1.0, q[0] * r[0] + q[1] * r[1] + q[2] * r[2]);
            }
            total += coef * rho * shape * phase;
        }
        if total.re.is_finite() && total.im.is_finite() {
            Ok(total)
        } else {
            Err(EvalError::Invalid("form factor is not finite".into()))
        }
    }

    /// Transform at current parameter values.
    pub fn transform(&self, q: V3) -> Result<Complex64, EvalError> {
        let ov = crate::expr::Overrides::new();
        self.transform_ctx(q, &EvalCtx::new(&ov))
    }

    /// Transform as an expression in the potential's variables.
    pub fn form_factor_expr(&self) -> Expr {
        Expr::special(Arc::new(FormFactor {
            potential: Arc::new(self.clone()),
        }))
    }

    /// Complex functor `F(qx, qy, qz)`.
    pub fn form_factor(&self, name: impl Into<String>) -> Result<Functor, ExprError> {
        Functor::with_variables(name, self.form_factor_expr(), self.vars.to_vec())
    }
}

fn single(vars: [&Variable; 3], material: &Material, shape: Shape, positions: Vec<Position>) -> Potential {
    Potential {
        vars: [vars[0].clone(), vars[1].clone(), vars[2].clone()],
        terms: vec![Term {
            coef: Expr::constant(1.0),
            shape,
            sld_re: material.sld_re.clone(),
            sld_im: material.sld_im.clone(),
            positions,
        }],
    }
}

/// Rectangular box of `material` with edges along the axes, one copy centred
/// at each of `positions`.
pub fn box_potential(
    vars: [&Variable; 3],
    material: &Material,
    wx: impl Into<Expr>,
    wy: impl Into<Expr>,
    wz: impl Into<Expr>,
    positions: Vec<Position>,
) -> Potential {
    let shape = Shape::Box {
        wx: wx.into(),
        wy: wy.into(),
        wz: wz.into(),
    };
    single(vars, material, shape, positions)
}

/// Closed polyhedral solid of `material`, one copy translated by each of
/// `positions`. Faces list vertex indices counter-clockwise seen from
/// outside.
pub fn polyhedron(
    vars: [&Variable; 3],
    material: &Material,
    vertices: Vec<V3>,
    faces: Vec<Vec<usize>>,
    positions: Vec<Position>,
) -> Result<Potential, PotentialError> {
    let mesh = Polyhedron::new(vertices, faces)?;
    Ok(single(vars, material, Shape::Polyhedron(Arc::new(mesh)), positions))
}

#[derive(Debug)]
struct FormFactor {
    potential: Arc<Potential>,
}

impl Special for FormFactor {
    fn label(&self) -> String {
        format!("formfactor[{} terms]", self.potential.terms.len())
    }

    fn domain(&self) -> Domain {
        Domain::Complex
    }

    fn children(&self) -> Vec<Expr> {
        self.potential.exprs()
    }

    fn free_variables(&self) -> Vec<Variable> {
        let mut out = self.potential.vars.to_vec();
        for e in self.children() {
            for v in e.free_variables() {
                if !out.contains(&v) {
                    out.push(v);
                }
            }
        }
        out
    }

    fn eval_complex(&self, ctx: &EvalCtx) -> Result<Complex64, EvalError> {
        let [a, b, c] = &self.potential.vars;
        self.potential.transform_ctx([ctx.var(a)?, ctx.var(b)?, ctx.var(c)?], ctx)
    }
}

#[derive(Debug)]
struct Lattice {
    var: Variable,
    period: Expr,
    count: usize,
}

/// `|sin(N q T/2) / sin(q T/2)|²`.
pub fn lattice_factor(q: f64, period: f64, count: usize) -> f64 {
    let n = count as f64;
    let s = (0.5 * q * period).sin();
    if s.abs() < 1e-12 {
        return n * n;
    }
    let r = (0.5 * n * q * period).sin() / s;
    r * r
}

impl Special for Lattice {
    fn label(&self) -> String {
        format!("lattice[{}]", self.count)
    }

    fn domain(&self) -> Domain {
        Domain::Real
    }

    fn children(&self) -> Vec<Expr> {
        vec![self.period.clone()]
    }

    fn free_variables(&self) -> Vec<Variable> {
        let mut out = vec![self.var.clone()];
        for v in self.period.free_variables() {
            if !out.contains(&v) {
                out.push(v);
            }
        }
        out
    }

    fn eval_real(&self, ctx: &EvalCtx) -> Result<f64, EvalError> {
        let q = ctx.var(&self.var)?;
        let t = self.period.eval_real(ctx)?;
        if !(t > 0.0) || !t.is_finite() {
            return Err(EvalError::Invalid(format!("lattice period must be positive, got {t}")));
        }
        Ok(lattice_factor(q, t, self.count))
    }

    fn eval_complex(&self, ctx: &EvalCtx) -> Result<Complex64, EvalError> {
        Ok(Complex64::new(self.eval_real(ctx)?, 0.0))
    }
}

/// One-dimensional lattice of `count` units spaced by `period` along `var`.
/// Two-dimensional lattices are products of two of these.
pub fn lattice(var: &Variable, period: impl Into<Expr>, count: usize) -> Result<Functor, PotentialError> {
    if count == 0 {
        return Err(PotentialError::LatticeCount);
    }
    let node = Lattice {
        var: var.clone(),
        period: period.into(),
        count,
    };
    let body = Expr::special(Arc::new(node));
    let mut vars = vec![var.clone()];
    for v in body.free_variables() {
        if !vars.contains(&v) {
            vars.push(v);
        }
    }
    Ok(Functor::with_variables(format!("lattice_{}", var.name()), body, vars)?)
}

/// Small-angle intensity `|F(q)|²·L(q)` over the potential's variables.
pub fn sas(potential: &Potential, lattice: &Functor) -> Result<Functor, PotentialError> {
    if lattice.variables().iter().any(|v| !potential.vars.contains(v)) {
        return Err(PotentialError::VariableMismatch);
    }
    let body = crate::expr::norm(potential.form_factor_expr()) * lattice.body();
    Ok(Functor::with_variables("sas", body, potential.vars.to_vec())?)
}
