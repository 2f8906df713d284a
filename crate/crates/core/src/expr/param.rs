use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;

use super::ExprError;

static NEXT_NODE_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) fn next_id() -> u64 {
    NEXT_NODE_ID.fetch_add(1, Ordering::Relaxed)
}

/// Mutable state of an independent parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamState {
    pub name: String,
    pub raw_value: f64,
    pub scale: f64,
    pub bounds: Option<(f64, f64)>,
    pub fixed: bool,
    pub units: String,
    /// Standard error of `raw_value`, set by error estimation after a fit.
    pub error: Option<f64>,
}

impl ParamState {
    pub fn value(&self) -> f64 {
        self.raw_value * self.scale
    }
}

struct ParamInner {
    id: u64,
    state: RwLock<ParamState>,
}

/// An independent, fittable leaf of the expression graph.
///
/// Cloning yields another handle to the same node. Identity is by node: two
/// parameters created with the same name are unrelated.
#[derive(Clone)]
pub struct Parameter(Arc<ParamInner>);

impl Parameter {
    /// Unbounded, free parameter with unit scale.
    pub fn new(name: impl Into<String>, value: f64) -> Parameter {
        ParamBuilder::new(name, value)
            .build()
            .expect("unit-scale unbounded parameter is always valid")
    }

    pub fn builder(name: impl Into<String>, value: f64) -> ParamBuilder {
        ParamBuilder::new(name, value)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn name(&self) -> String {
        self.0.state.read().name.clone()
    }

    /// Effective value, `raw_value * scale`.
    pub fn value(&self) -> f64 {
        self.0.state.read().value()
    }

    pub fn raw_value(&self) -> f64 {
        self.0.state.read().raw_value
    }

    pub fn scale(&self) -> f64 {
        self.0.state.read().scale
    }

    pub fn bounds(&self) -> Option<(f64, f64)> {
        self.0.state.read().bounds
    }

    pub fn is_fixed(&self) -> bool {
        self.0.state.read().fixed
    }

    pub fn units(&self) -> String {
        self.0.state.read().units.clone()
    }

    pub fn error(&self) -> Option<f64> {
        self.0.state.read().error
    }

    pub fn state(&self) -> ParamState {
        self.0.state.read().clone()
    }

    /// Sets the raw value. Values outside the bounds are rejected, never clamped.
    pub fn set_raw_value(&self, value: f64) -> Result<(), ExprError> {
        let mut st = self.0.state.write();
        check_value(&st.name, value, st.bounds)?;
        st.raw_value = value;
        Ok(())
    }

    /// Sets the effective value (`raw_value = value / scale`).
    pub fn set_value(&self, value: f64) -> Result<(), ExprError> {
        let scale = self.scale();
        self.set_raw_value(value / scale)
    }

    pub fn set_fixed(&self, fixed: bool) {
        self.0.state.write().fixed = fixed;
    }

    pub fn set_bounds(&self, bounds: Option<(f64, f64)>) -> Result<(), ExprError> {
        let mut st = self.0.state.write();
        if let Some((lo, hi)) = bounds {
            if !(lo <= hi) {
                return Err(ExprError::InvalidBounds {
                    name: st.name.clone(),
                    lo,
                    hi,
                });
            }
        }
        check_value(&st.name, st.raw_value, bounds)?;
        st.bounds = bounds;
        Ok(())
    }

    pub fn set_error(&self, error: Option<f64>) {
        self.0.state.write().error = error;
    }

    pub fn rename(&self, name: impl Into<String>) {
        self.0.state.write().name = name.into();
    }

    pub fn ptr_eq(&self, other: &Parameter) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

fn check_value(name: &str, value: f64, bounds: Option<(f64, f64)>) -> Result<(), ExprError> {
    if !value.is_finite() {
        return Err(ExprError::NonFiniteValue {
            name: name.to_string(),
            value,
        });
    }
    if let Some((lo, hi)) = bounds {
        if value < lo || value > hi {
            return Err(ExprError::OutOfBounds {
                name: name.to_string(),
                value,
                lo,
                hi,
            });
        }
    }
    Ok(())
}

impl PartialEq for Parameter {
    fn eq(&self, other: &Self) -> bool {
        self.ptr_eq(other)
    }
}

impl Eq for Parameter {}

impl std::hash::Hash for Parameter {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.0.id.hash(state);
    }
}

impl fmt::Debug for Parameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let st = self.0.state.read();
        f.debug_struct("Parameter")
            .field("id", &self.0.id)
            .field("name", &st.name)
            .field("raw_value", &st.raw_value)
            .field("scale", &st.scale)
            .field("bounds", &st.bounds)
            .field("fixed", &st.fixed)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub struct ParamBuilder {
    state: ParamState,
}

impl ParamBuilder {
    fn new(name: impl Into<String>, value: f64) -> Self {
        ParamBuilder {
            state: ParamState {
                name: name.into(),
                raw_value: value,
                scale: 1.0,
                bounds: None,
                fixed: false,
                units: String::new(),
                error: None,
            },
        }
    }

    pub fn scale(mut self, scale: f64) -> Self {
        self.state.scale = scale;
        self
    }

    pub fn bounds(mut self, lo: f64, hi: f64) -> Self {
        self.state.bounds = Some((lo, hi));
        self
    }

    pub fn maybe_bounds(mut self, bounds: Option<(f64, f64)>) -> Self {
        self.state.bounds = bounds;
        self
    }

    pub fn fixed(mut self, fixed: bool) -> Self {
        self.state.fixed = fixed;
        self
    }

    pub fn units(mut self, units: impl Into<String>) -> Self {
        self.state.units = units.into();
        self
    }

    pub fn build(self) -> Result<Parameter, ExprError> {
        let st = self.state;
        if st.scale == 0.0 || !st.scale.is_finite() {
            return Err(ExprError::ZeroScale { name: st.name });
        }
        if let Some((lo, hi)) = st.bounds {
            if !(lo <= hi) {
                return Err(ExprError::InvalidBounds {
                    name: st.name,
                    lo,
                    hi,
                });
            }
        }
        check_value(&st.name, st.raw_value, st.bounds)?;
        Ok(Parameter(Arc::new(ParamInner {
            id: next_id(),
            state: RwLock::new(st),
        })))
    }
}

struct VarInner {
    id: u64,
    name: String,
}

/// A free coordinate of a functor (for example the momentum transfer `q`).
#[derive(Clone)]
pub struct Variable(Arc<VarInner>);

impl Variable {
    pub fn new(name: impl Into<String>) -> Variable {
        Variable(Arc::new(VarInner {
            id: next_id(),
            name: name.into(),
        }))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn name(&self) -> &str {
        &self.0.name
    }
}

impl PartialEq for Variable {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

impl Eq for Variable {}

impl std::hash::Hash for Variable {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.0.id.hash(state);
    }
}

impl fmt::Debug for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Variable({}#{})", self.0.name, self.0.id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn effective_value_is_raw_times_scale() {
        let r = Parameter::builder("R", 7.5).units("nm").build().unwrap();
        assert_eq!(r.value(), 7.5);
        let c = Parameter::builder("Contrast", 1.2).scale(1e-3).build().unwrap();
        assert!((c.value() - 1.2e-3).abs() < 1e-18);
        c.set_raw_value(2.0).unwrap();
        assert_eq!(c.value(), 2.0 * 1e-3);
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            Parameter::builder("p", 5.0).bounds(0.0, 1.0).build(),
            Err(ExprError::OutOfBounds { .. })
        ));
        assert!(matches!(
            Parameter::builder("p", 5.0).scale(0.0).build(),
            Err(ExprError::ZeroScale { .. })
        ));
    }

    #[test]
    fn out_of_bounds_set_is_rejected_not_clamped() {
        let p = Parameter::builder("p", 0.5).bounds(0.0, 1.0).build().unwrap();
        assert!(p.set_raw_value(1.5).is_err());
        assert_eq!(p.raw_value(), 0.5);
        assert!(p.set_bounds(Some((0.6, 1.0))).is_err());
        assert_eq!(p.bounds(), Some((0.0, 1.0)));
    }

    #[test]
    fn identity_is_by_node() {
        let a = Parameter::new("x", 1.0);
        let b = Parameter::new("x", 1.0);
        assert_ne!(a, b);
        assert_eq!(a, a.clone());
    }
}
