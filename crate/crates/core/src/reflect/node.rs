use std::sync::Arc;

use num_complex::Complex64;

use super::{reflectivity, Formalism, Multilayer, ReflectError};
use crate::expr::{Domain, EvalCtx, EvalError, Expr, ExprError, Functor, Special, Variable};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spin {
    Up,
    Down,
}

impl Spin {
    fn sign(self) -> f64 {
        match self {
            Spin::Up => 1.0,
            Spin::Down => -1.0,
        }
    }
}

#[derive(Debug)]
enum Mode {
    Unpolarized,
    Channel(Spin),
    Mixed { p_i: Expr, p_f: Expr },
}

#[derive(Debug)]
struct Reflectivity {
    q: Variable,
    sample: Arc<Multilayer>,
    formalism: Formalism,
    mode: Mode,
}

fn weight(p: f64, s: f64) -> f64 {
    0.5 * (1.0 + s * p)
}

fn check_efficiency(p: f64) -> Result<f64, ReflectError> {
    if (-1.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(ReflectError::Polarization(p))
    }
}

/// Measured intensity from the four spin channels `[R++, R+-, R-+, R--]`
/// with polarizer efficiency `p_i` and analyzer efficiency `p_f`.
pub fn mix_channels(channels: [f64; 4], p_i: f64, p_f: f64) -> Result<f64, ReflectError> {
    let (p_i, p_f) = (check_efficiency(p_i)?, check_efficiency(p_f)?);
    let [pp, pm, mp, mm] = channels;
    Ok(weight(p_i, 1.0) * weight(p_f, 1.0) * pp
        + weight(p_i, 1.0) * weight(p_f, -1.0) * pm
        + weight(p_i, -1.0) * weight(p_f, 1.0) * mp
        + weight(p_i, -1.0) * weight(p_f, -1.0) * mm)
}

impl Special for Reflectivity {
    fn label(&self) -> String {
        match &self.mode {
            Mode::Unpolarized => format!("specrefl {}", self.sample.name),
            Mode::Channel(s) => format!("pnr {:?} {}", s, self.sample.name),
            Mode::Mixed { .. } => format!("pnrspec {}", self.sample.name),
        }
    }

    fn domain(&self) -> Domain {
        Domain::Real
    }

    fn children(&self) -> Vec<Expr> {
        let mut out = self.sample.exprs();
        if let Mode::Mixed { p_i, p_f } = &self.mode {
            out.push(p_i.clone());
            out.push(p_f.clone());
        }
        out
    }

    fn free_variables(&self) -> Vec<Variable> {
        let mut out = vec![self.q.clone()];
        for e in self.children() {
            for v in e.free_variables() {
                if !out.contains(&v) {
                    out.push(v);
                }
            }
        }
        out
    }

    fn eval_real(&self, ctx: &EvalCtx) -> Result<f64, EvalError> {
        let q = ctx.var(&self.q)?;
        let slabs = self.sample.flatten_ctx(ctx)?;
        Ok(match &self.mode {
            Mode::Unpolarized => reflectivity(&slabs, q, 0.0, self.formalism),
            Mode::Channel(s) => reflectivity(&slabs, q, s.sign(), self.formalism),
            Mode::Mixed { p_i, p_f } => {
                let (pi, pf) = (p_i.eval_real(ctx)?, p_f.eval_real(ctx)?);
                let up = reflectivity(&slabs, q, 1.0, self.formalism);
                let down = reflectivity(&slabs, q, -1.0, self.formalism);
                mix_channels([up, 0.0, 0.0, down], pi, pf)?
            }
        })
    }

    fn eval_complex(&self, ctx: &EvalCtx) -> Result<Complex64, EvalError> {
        Ok(Complex64::new(self.eval_real(ctx)?, 0.0))
    }
}

fn build(q: &Variable, sample: &Multilayer, formalism: Formalism, mode: Mode, name: String) -> Result<Functor, ExprError> {
    let node = Reflectivity {
        q: q.clone(),
        sample: Arc::new(sample.clone()),
        formalism,
        mode,
    };
    let body = Expr::special(Arc::new(node));
    let mut vars = vec![q.clone()];
    for v in body.free_variables() {
        if !vars.contains(&v) {
            vars.push(v);
        }
    }
    Functor::with_variables(name, body, vars)
}

/// Specular reflectivity `R(Q)` of `sample`. The sample is captured by
/// structure; its parameters remain live.
pub fn specrefl(q: &Variable, sample: &Multilayer, formalism: Formalism) -> Result<Functor, ExprError> {
    build(q, sample, formalism, Mode::Unpolarized, format!("specrefl_{}", sample.name))
}

/// One non-spin-flip channel, SLD `ρ ± msld`.
pub fn pnr_channel(q: &Variable, sample: &Multilayer, spin: Spin, formalism: Formalism) -> Result<Functor, ExprError> {
    let tag = if spin == Spin::Up { "pp" } else { "mm" };
    build(q, sample, formalism, Mode::Channel(spin), format!("pnr_{tag}_{}", sample.name))
}

/// Collinear polarized reflectivity as measured with polarizer efficiency
/// `p_i` and analyzer efficiency `p_f`; spin-flip channels are zero.
pub fn pnrspec(
    q: &Variable,
    sample: &Multilayer,
    p_i: impl Into<Expr>,
    p_f: impl Into<Expr>,
    formalism: Formalism,
) -> Result<Functor, ExprError> {
    build(
        q,
        sample,
        formalism,
        Mode::Mixed {
            p_i: p_i.into(),
            p_f: p_f.into(),
        },
        format!("pnrspec_{}", sample.name),
    )
}
