//! Layered samples and specular reflectivity.
//!
//! SLDs are in nm⁻², thicknesses and roughnesses in nm, Q in nm⁻¹. A positive
//! imaginary SLD means absorption: it damps the wave inside the layer.

mod kernel;
mod node;

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{EvalCtx, EvalError, Expr, Overrides};

pub use kernel::{fresnel, matrix_amplitude, parratt_amplitude, reflectivity, wavevectors};
pub use node::{mix_channels, pnr_channel, pnrspec, specrefl, Spin};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReflectError {
    #[error("repeats must be an integer of at least 1, got {0}")]
    Repeats(f64),
    #[error("{what} of `{name}` is not finite: {value}")]
    NonFinite { what: &'static str, name: String, value: f64 },
    #[error("{what} of `{name}` must be non-negative, got {value}")]
    Negative { what: &'static str, name: String, value: f64 },
    #[error("polarization efficiency must be within [-1, 1], got {0}")]
    Polarization(f64),
    #[error("wavelength must be positive, got {0}")]
    Wavelength(f64),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl From<ReflectError> for EvalError {
    fn from(e: ReflectError) -> EvalError {
        match e {
            ReflectError::Eval(e) => e,
            other => EvalError::Invalid(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formalism {
    #[default]
    Parratt,
    Matrix,
}

#[derive(Debug, Clone)]
pub struct Material {
    pub name: String,
    pub sld_re: Expr,
    pub sld_im: Expr,
}

impl Material {
    pub fn new(name: impl Into<String>, sld_re: impl Into<Expr>, sld_im: impl Into<Expr>) -> Material {
        Material {
            name: name.into(),
            sld_re: sld_re.into(),
            sld_im: sld_im.into(),
        }
    }

    pub fn vacuum() -> Material {
        Material::new("vacuum", 0.0, 0.0)
    }

    /// `(δ, β)` of the refractive index `n = 1 - δ + iβ` at `wavelength` nm.
    pub fn refractive_terms(&self, wavelength: f64) -> Result<(f64, f64), ReflectError> {
        if !(wavelength > 0.0) {
            return Err(ReflectError::Wavelength(wavelength));
        }
        let k = wavelength * wavelength / (2.0 * PI);
        Ok((k * self.sld_re.value()?, k * self.sld_im.value()?))
    }
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub name: String,
    pub material: Material,
    pub thickness: Expr,
    /// rms roughness of the layer's upper interface.
    pub roughness: Expr,
    pub msld: Expr,
}

impl Layer {
    pub fn new(
        name: impl Into<String>,
        material: Material,
        thickness: impl Into<Expr>,
        roughness: impl Into<Expr>,
    ) -> Layer {
        Layer {
            name: name.into(),
            material,
            thickness: thickness.into(),
            roughness: roughness.into(),
            msld: Expr::constant(0.0),
        }
    }

    pub fn with_msld(mut self, msld: impl Into<Expr>) -> Layer {
        self.msld = msld.into();
        self
    }

    fn exprs(&self) -> [&Expr; 5] {
        [
            &self.material.sld_re,
            &self.material.sld_im,
            &self.thickness,
            &self.roughness,
            &self.msld,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct Stack {
    pub name: String,
    pub layers: Vec<Layer>,
    pub repeats: Expr,
}

impl Stack {
    pub fn new(name: impl Into<String>, layers: Vec<Layer>, repeats: impl Into<Expr>) -> Stack {
        Stack {
            name: name.into(),
            layers,
            repeats: repeats.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Item {
    Layer(Layer),
    Stack(Stack),
}

impl From<Layer> for Item {
    fn from(l: Layer) -> Item {
        Item::Layer(l)
    }
}

impl From<Stack> for Item {
    fn from(s: Stack) -> Item {
        Item::Stack(s)
    }
}

/// Ambient on top, then `items` top to bottom, then the substrate.
#[derive(Debug, Clone)]
pub struct Multilayer {
    pub name: String,
    pub ambient: Material,
    pub substrate: Layer,
    pub items: Vec<Item>,
}

/// A layer with its values evaluated. `rho` carries the absorption as a
/// negative imaginary part, the form that enters the wavevector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slab {
    pub sld_re: f64,
    pub sld_im: f64,
    pub msld: f64,
    pub thickness: f64,
    pub roughness: f64,
}

impl Slab {
    /// Complex SLD for neutron spin `s` (+1, -1, or 0 for unpolarized).
    pub fn rho(&self, s: f64) -> Complex64 {
        Complex64::new(self.sld_re + s * self.msld, -self.sld_im)
    }
}

impl Multilayer {
    pub fn new(name: impl Into<String>, ambient: Material, substrate: Layer) -> Multilayer {
        Multilayer {
            name: name.into(),
            ambient,
            substrate,
            items: Vec::new(),
        }
    }

    /// Inserts between the substrate and the current lowest layer.
    pub fn add(&mut self, item: impl Into<Item>) -> &mut Self {
        self.items.push(item.into());
        self
    }

    pub fn with(mut self, item: impl Into<Item>) -> Self {
        self.add(item);
        self
    }

    /// Every expression the sample depends on.
    pub fn exprs(&self) -> Vec<Expr> {
        let mut out = vec![self.ambient.sld_re.clone(), self.ambient.sld_im.clone()];
        let push_layer = |l: &Layer, out: &mut Vec<Expr>| out.extend(l.exprs().into_iter().cloned());
        for it in &self.items {
            match it {
                Item::Layer(l) => push_layer(l, &mut out),
                Item::Stack(s) => {
                    out.push(s.repeats.clone());
                    for l in &s.layers {
                        push_layer(l, &mut out);
                    }
                }
            }
        }
        push_layer(&self.substrate, &mut out);
        out
    }

    /// Interior layers top to bottom with stacks expanded; repeated layers are
    /// the same handles, so their parameters stay shared.
    pub fn layers(&self) -> Result<Vec<Layer>, ReflectError> {
        self.layers_ctx(&EvalCtx::new(&Overrides::new()))
    }

    fn layers_ctx(&self, ctx: &EvalCtx) -> Result<Vec<Layer>, ReflectError> {
        let mut out = Vec::new();
        for it in &self.items {
            match it {
                Item::Layer(l) => out.push(l.clone()),
                Item::Stack(s) => {
                    let r = s.repeats.eval_real(ctx)?;
                    let n = r.round();
                    if !r.is_finite() || (r - n).abs() > 1e-9 || n < 1.0 {
                        return Err(ReflectError::Repeats(r));
                    }
                    for _ in 0..n as usize {
                        out.extend(s.layers.iter().cloned());
                    }
                }
            }
        }
        Ok(out)
    }

    /// Evaluated sequence ambient, layers..., substrate at current values.
    pub fn flatten(&self) -> Result<Vec<Slab>, ReflectError> {
        self.flatten_ctx(&EvalCtx::new(&Overrides::new()))
    }

    pub fn flatten_ctx(&self, ctx: &EvalCtx) -> Result<Vec<Slab>, ReflectError> {
        let layers = self.layers_ctx(ctx)?;
        let mut out = Vec::with_capacity(layers.len() + 2);
        let fin = |what, name: &str, v: f64| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(ReflectError::NonFinite {
                    what,
                    name: name.to_string(),
                    value: v,
                })
            }
        };
        let nonneg = |what, name: &str, v: f64| {
            let v = fin(what, name, v)?;
            if v < 0.0 {
                Err(ReflectError::Negative {
                    what,
                    name: name.to_string(),
                    value: v,
                })
            } else {
                Ok(v)
            }
        };
        let slab = |l: &Layer| -> Result<Slab, ReflectError> {
            Ok(Slab {
                sld_re: fin("sld_re", &l.name, l.material.sld_re.eval_real(ctx)?)?,
                sld_im: fin("sld_im", &l.name, l.material.sld_im.eval_real(ctx)?)?,
                msld: fin("msld", &l.name, l.msld.eval_real(ctx)?)?,
                thickness: nonneg("thickness", &l.name, l.thickness.eval_real(ctx)?)?,
                roughness: nonneg("roughness", &l.name, l.roughness.eval_real(ctx)?)?,
            })
        };
        out.push(Slab {
            sld_re: fin("sld_re", &self.ambient.name, self.ambient.sld_re.eval_real(ctx)?)?,
            sld_im: fin("sld_im", &self.ambient.name, self.ambient.sld_im.eval_real(ctx)?)?,
            msld: 0.0,
            thickness: 0.0,
            roughness: 0.0,
        });
        for l in &layers {
            out.push(slab(l)?);
        }
        out.push(slab(&self.substrate)?);
        Ok(out)
    }

    /// Real SLD profile along depth `z` (0 at the top interface).
    pub fn sld_profile(&self, z: &[f64]) -> Result<Vec<f64>, ReflectError> {
        self.profile(z, ProfileComponent::Real)
    }

    pub fn profile(&self, z: &[f64], component: ProfileComponent) -> Result<Vec<f64>, ReflectError> {
        Ok(profile(&self.flatten()?, z, component))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileComponent {
    Real,
    Imaginary,
    Magnetic,
}

/// Error-function smeared step profile of evaluated slabs.
pub fn profile(slabs: &[Slab], z: &[f64], component: ProfileComponent) -> Vec<f64> {
    let value = |s: &Slab| match component {
        ProfileComponent::Real => s.sld_re,
        ProfileComponent::Imaginary => s.sld_im,
        ProfileComponent::Magnetic => s.msld,
    };
    let mut steps = Vec::with_capacity(slabs.len());
    let mut depth = 0.0;
    for j in 1..slabs.len() {
        steps.push((depth, slabs[j].roughness, value(&slabs[j]) - value(&slabs[j - 1])));
        depth += slabs[j].thickness;
    }
    let base = value(&slabs[0]);
    z.iter()
        .map(|&z| {
            steps.iter().fold(base, |acc, &(zj, sigma, d)| {
                let w = if sigma > 0.0 {
                    0.5 * (1.0 + libm::erf((z - zj) / (2f64.sqrt() * sigma)))
                } else if z > zj {
                    1.0
                } else if z < zj {
                    0.0
                } else {
                    0.5
                };
                acc + d * w
            })
        })
        .collect()
}
