use smallvec::SmallVec;

use super::{EvalError, Parameter, Variable};

/// Temporary effective values for parameters, consulted during evaluation
/// instead of the values stored on the nodes.
///
/// Overrides never touch the shared graph, so evaluations with different
/// overrides may run concurrently.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    // sorted by parameter id
    entries: Vec<(u64, f64)>,
}

impl Overrides {
    pub fn new() -> Self {
        Self::default()
    }

    /// Overrides from raw values; effective values use each parameter's scale.
    pub fn from_raw(params: &[Parameter], raw: &[f64]) -> Self {
        debug_assert_eq!(params.len(), raw.len());
        let mut out = Overrides {
            entries: params
                .iter()
                .zip(raw)
                .map(|(p, &r)| (p.id(), r * p.scale()))
                .collect(),
        };
        out.entries.sort_by_key(|e| e.0);
        out.entries.dedup_by_key(|e| e.0);
        out
    }

    /// Sets the effective value used for `param`.
    pub fn set(&mut self, param: &Parameter, value: f64) {
        match self.entries.binary_search_by_key(&param.id(), |e| e.0) {
            Ok(i) => self.entries[i].1 = value,
            Err(i) => self.entries.insert(i, (param.id(), value)),
        }
    }

    pub fn get(&self, id: u64) -> Option<f64> {
        if self.entries.is_empty() {
            return None;
        }
        self.entries
            .binary_search_by_key(&id, |e| e.0)
            .ok()
            .map(|i| self.entries[i].1)
    }

    /// Effective value of `param` under these overrides.
    pub fn value_of(&self, param: &Parameter) -> f64 {
        self.get(param.id()).unwrap_or_else(|| param.value())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Per-point evaluation state: bound variable values plus parameter overrides.
#[derive(Debug, Clone)]
pub struct EvalCtx<'a> {
    vars: SmallVec<[(u64, f64); 6]>,
    overrides: &'a Overrides,
    local: SmallVec<[(u64, f64); 2]>,
}

impl<'a> EvalCtx<'a> {
    pub fn new(overrides: &'a Overrides) -> Self {
        EvalCtx {
            vars: SmallVec::new(),
            overrides,
            local: SmallVec::new(),
        }
    }

    /// Binds (or rebinds) a variable.
    pub fn bind(&mut self, var: &Variable, value: f64) {
        let id = var.id();
        match self.vars.iter_mut().find(|e| e.0 == id) {
            Some(e) => e.1 = value,
            None => self.vars.push((id, value)),
        }
    }

    pub fn with_var(&self, var: &Variable, value: f64) -> Self {
        let mut ctx = self.clone();
        ctx.bind(var, value);
        ctx
    }

    /// A context in which `param` evaluates to `value`, shadowing any
    /// override already in effect.
    pub fn with_param(&self, param: &Parameter, value: f64) -> Self {
        let mut ctx = self.clone();
        let id = param.id();
        match ctx.local.iter_mut().find(|e| e.0 == id) {
            Some(e) => e.1 = value,
            None => ctx.local.push((id, value)),
        }
        ctx
    }

    pub fn var(&self, var: &Variable) -> Result<f64, EvalError> {
        let id = var.id();
        self.vars
            .iter()
            .find(|e| e.0 == id)
            .map(|e| e.1)
            .ok_or_else(|| EvalError::UnboundVariable(var.name().to_string()))
    }

    pub fn param(&self, param: &Parameter) -> f64 {
        let id = param.id();
        if let Some(e) = self.local.iter().rev().find(|e| e.0 == id) {
            return e.1;
        }
        self.overrides.value_of(param)
    }

    pub fn overrides(&self) -> &'a Overrides {
        self.overrides
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_shadow_stored_values() {
        let p = Parameter::builder("p", 2.0).scale(10.0).build().unwrap();
        let q = Parameter::new("q", 1.0);
        let ov = Overrides::from_raw(&[p.clone()], &[3.0]);
        let ctx = EvalCtx::new(&ov);
        assert_eq!(ctx.param(&p), 30.0);
        assert_eq!(ctx.param(&q), 1.0);
        let inner = ctx.with_param(&p, -1.0);
        assert_eq!(inner.param(&p), -1.0);
        assert_eq!(ctx.param(&p), 30.0);
        assert_eq!(p.value(), 20.0);
    }

    #[test]
    fn unbound_variable_is_an_error() {
        let ov = Overrides::new();
        let ctx = EvalCtx::new(&ov);
        let x = Variable::new("x");
        assert!(matches!(ctx.var(&x), Err(EvalError::UnboundVariable(_))));
        assert_eq!(ctx.with_var(&x, 4.0).var(&x).unwrap(), 4.0);
    }
}
