use serde::{Deserialize, Serialize};

use super::{MetricError, MetricId, MetricResult};

/// Weighted combination of several metrics on a common [0, 1] scale.
/// Distances enter as `1 / (1 + d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompoundSpec {
    components: Vec<(MetricId, f64)>,
}

impl CompoundSpec {
    /// Normalises the weights to sum to one.
    pub fn new(components: Vec<(MetricId, f64)>) -> Result<Self, MetricError> {
        if components.is_empty() {
            return Err(MetricError::Compound(
                "at least one component required".into(),
            ));
        }
        for (m, w) in &components {
            if !(w.is_finite() && *w >= 0.0) {
                return Err(MetricError::Compound(format!(
                    "weight for `{m}` must be >= 0"
                )));
            }
            if m.is_chance_corrected() {
                return Err(MetricError::Compound(format!(
                    "`{m}` ranges over [-1, 1] and cannot enter a [0, 1] compound"
                )));
            }
        }
        let total: f64 = components.iter().map(|c| c.1).sum();
        if total <= 0.0 {
            return Err(MetricError::Compound("weights sum to zero".into()));
        }
        Ok(Self {
            components: components
                .into_iter()
                .map(|(m, w)| (m, w / total))
                .collect(),
        })
    }

    pub fn components(&self) -> &[(MetricId, f64)] {
        &self.components
    }
}

pub fn compound_score(
    results: &[MetricResult],
    spec: &CompoundSpec,
) -> Result<MetricResult, MetricError> {
    let mut total = 0.0;
    for &(metric, weight) in &spec.components {
        let r = results
            .iter()
            .find(|r| r.metric == metric)
            .ok_or(MetricError::MissingComponent(metric))?;
        let v = r.value.ok_or(MetricError::UndefinedComponent(metric))?;
        total += weight * metric.to_similarity(v);
    }
    // compound results are reported under the first component's id
    Ok(MetricResult::defined(spec.components[0].0, total))
}
