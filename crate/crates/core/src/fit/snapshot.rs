use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{FitResult, FitStatus};
use crate::expr::{ExprError, Parameter};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SnapshotError {
    #[error("malformed snapshot: {0}")]
    Json(String),
    #[error("snapshot names unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("parameter `{name}`: {source}")]
    Invalid { name: String, source: ExprError },
}

/// Stored state of one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub id: String,
    pub name: String,
    pub raw_value: f64,
    pub scale: f64,
    pub error: Option<f64>,
    pub fixed: bool,
    pub bounds: Option<[f64; 2]>,
    #[serde(default)]
    pub units: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub chi2: f64,
    pub status: FitStatus,
    pub timestamp: String,
}

impl FitMeta {
    pub fn now(result: &FitResult) -> FitMeta {
        FitMeta {
            chi2: result.chi2,
            status: result.status,
            timestamp: chrono::Utc::now().to_rfc3339(),
        }
    }
}

/// Save/load document: parameter records plus the last fit, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub parameters: Vec<ParamRecord>,
    #[serde(default)]
    pub fit: Option<FitMeta>,
}

impl Snapshot {
    pub fn capture(params: &[Parameter], fit: Option<FitMeta>) -> Snapshot {
        let parameters = params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let st = p.state();
                ParamRecord {
                    id: format!("p{i}"),
                    name: st.name,
                    raw_value: st.raw_value,
                    scale: st.scale,
                    error: st.error,
                    fixed: st.fixed,
                    bounds: st.bounds.map(|(a, b)| [a, b]),
                    units: st.units,
                }
            })
            .collect();
        Snapshot { parameters, fit }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Snapshot, SnapshotError> {
        serde_json::from_str(text).map_err(|e| SnapshotError::Json(e.to_string()))
    }

    /// Writes values, bounds, fixed flags and errors back onto `params`,
    /// matched by name. Everything is validated before anything changes.
    /// Scales are not altered: records are converted to each parameter's
    /// current scale.
    pub fn apply(&self, params: &[Parameter]) -> Result<usize, SnapshotError> {
        let mut plan = Vec::with_capacity(self.parameters.len());
        for rec in &self.parameters {
            let p = params
                .iter()
                .find(|p| p.name() == rec.name)
                .ok_or_else(|| SnapshotError::UnknownParameter(rec.name.clone()))?;
            let k = rec.scale / p.scale();
            let raw = rec.raw_value * k;
            let bounds = rec.bounds.map(|[a, b]| (a * k, b * k)).map(|(a, b)| (a.min(b), a.max(b)));
            let invalid = |source| SnapshotError::Invalid {
                name: rec.name.clone(),
                source,
            };
            if !raw.is_finite() {
                return Err(invalid(ExprError::NonFiniteValue {
                    name: rec.name.clone(),
                    value: raw,
                }));
            }
            if let Some((lo, hi)) = bounds {
                if !(lo <= raw && raw <= hi) {
                    return Err(invalid(ExprError::OutOfBounds {
                        name: rec.name.clone(),
                        value: raw,
                        lo,
                        hi,
                    }));
                }
            }
            plan.push((p, raw, bounds, rec.fixed, rec.error.map(|e| e * k.abs())));
        }
        for (p, raw, bounds, fixed, error) in &plan {
            p.set_bounds(None).expect("clearing bounds");
            p.set_raw_value(*raw).expect("validated value");
            p.set_bounds(*bounds).expect("validated bounds");
            p.set_fixed(*fixed);
            p.set_error(*error);
        }
        Ok(plan.len())
    }
}
