//! Peak Ground Truth band: inter-rater reliability as the lower edge,
//! intra-rater reliability as the upper edge, and verdicts for model scores.
//!
//! All edges and scores are compared on a higher-is-better scale. Distance
//! metrics are mapped through `1 / (1 + d)` before comparison.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::grid::LabelGrid;
use crate::metrics::{MetricConfig, MetricError, MetricId};
use crate::reliability::{
    inter_rater, intra_rater, stable_mean, BootstrapSpec, RaterSet, ReliabilityError,
    ReliabilityEstimate,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PgtError {
    #[error(transparent)]
    Reliability(#[from] ReliabilityError),
    #[error("model `{model}` is missing items: {}", items.join(", "))]
    MissingItems { model: String, items: Vec<String> },
    #[error("item `{item}` has no reference annotation from `{reference}`")]
    MissingReference { item: String, reference: String },
    #[error("model `{model}`, item `{item}`: {source}")]
    Metric {
        model: String,
        item: String,
        #[source]
        source: MetricError,
    },
    #[error("model `{model}`: metric undefined on every item")]
    AllUndefined { model: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PgtBand {
    pub metric: MetricId,
    pub lower: ReliabilityEstimate,
    pub upper: ReliabilityEstimate,
    /// Set when the inter-rater edge exceeds the intra-rater edge, a sign of
    /// systematic annotation error. The band is reported as-is.
    pub caveat: bool,
}

impl PgtBand {
    pub fn new(lower: ReliabilityEstimate, upper: ReliabilityEstimate) -> Self {
        let metric = lower.metric;
        let caveat = metric.to_similarity(lower.point) > metric.to_similarity(upper.point);
        Self {
            metric,
            lower,
            upper,
            caveat,
        }
    }

    /// Lower edge on the higher-is-better scale.
    pub fn lower_edge(&self) -> f64 {
        self.metric.to_similarity(self.lower.point)
    }

    pub fn upper_edge(&self) -> f64 {
        self.metric.to_similarity(self.upper.point)
    }

    /// Conservative edges from the interval ends: the lower edge's CI low and
    /// the upper edge's CI high (on the higher-is-better scale).
    pub fn conservative_edges(&self) -> (f64, f64) {
        let m = self.metric;
        let lo = m
            .to_similarity(self.lower.ci_low)
            .min(m.to_similarity(self.lower.ci_high));
        let hi = m
            .to_similarity(self.upper.ci_low)
            .max(m.to_similarity(self.upper.ci_high));
        (lo, hi)
    }
}

/// Inter- and intra-rater estimates on the same set and metric.
pub fn estimate_band(
    set: &RaterSet,
    metric: impl Into<MetricConfig>,
    boot: &BootstrapSpec,
) -> Result<PgtBand, PgtError> {
    let metric = metric.into();
    let lower = inter_rater(set, metric, boot)?;
    let upper = intra_rater(set, metric, boot)?;
    Ok(PgtBand::new(lower, upper))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum VerdictClass {
    BelowBand,
    WithinBand,
    /// Similarity beyond intra-rater consistency: the model likely fits
    /// annotation noise. A warning, not a failure.
    AboveBand,
}

impl VerdictClass {
    pub fn as_str(self) -> &'static str {
        match self {
            VerdictClass::BelowBand => "BelowBand",
            VerdictClass::WithinBand => "WithinBand",
            VerdictClass::AboveBand => "AboveBand",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Verdict {
    pub class: VerdictClass,
    /// Distance to the nearest band edge; 0 on an edge.
    pub margin: f64,
    /// Copied from the band's caveat flag.
    pub band_unreliable: bool,
}

/// Places a higher-is-better score relative to the band. Edges are inclusive.
pub fn classify_score(score: f64, band: &PgtBand) -> Verdict {
    let (lo, hi) = (band.lower_edge(), band.upper_edge());
    let (class, margin) = if score > hi {
        (VerdictClass::AboveBand, score - hi)
    } else if score < lo {
        (VerdictClass::BelowBand, lo - score)
    } else {
        (VerdictClass::WithinBand, (score - lo).min(hi - score))
    };
    Verdict {
        class,
        margin,
        band_unreliable: band.caveat,
    }
}

/// What model outputs are compared against.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    /// Repeat 0 of the named rater.
    Rater(String),
    /// One precomputed (e.g. fused) grid per item.
    Consensus(BTreeMap<String, LabelGrid>),
}

impl Reference {
    /// Repeat 0 of the alphabetically first rater.
    pub fn first_rater(set: &RaterSet) -> Option<Self> {
        set.raters().into_iter().next().map(Reference::Rater)
    }

    fn name(&self) -> String {
        match self {
            Reference::Rater(r) => r.clone(),
            Reference::Consensus(_) => "consensus".into(),
        }
    }

    fn grid<'a>(&'a self, set: &'a RaterSet, item: &str) -> Option<&'a LabelGrid> {
        match self {
            Reference::Rater(r) => set.item(item).and_then(|i| i.get(r, 0)),
            Reference::Consensus(map) => map.get(item),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemScore {
    pub item_id: String,
    /// Raw metric value; `None` where the metric is undefined.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelReport {
    pub model_id: String,
    /// Mean of the defined per-item values, in the metric's own units.
    pub mean_score: f64,
    /// `mean_score` on the higher-is-better scale used for the verdict.
    pub similarity: f64,
    pub verdict: VerdictClass,
    pub margin: f64,
    pub band_unreliable: bool,
    pub per_item: Vec<ItemScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub n_undefined_pairs: usize,
    pub n_undefined_model_items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PgtReport {
    pub version: String,
    pub dataset: String,
    pub metric: MetricId,
    pub seed: u64,
    pub reference: String,
    pub band: PgtBand,
    pub models: Vec<ModelReport>,
    pub diagnostics: Diagnostics,
}

impl PgtReport {
    pub fn any_above_band(&self) -> bool {
        self.models
            .iter()
            .any(|m| m.verdict == VerdictClass::AboveBand)
    }
}

/// Scores every model against the reference on every item and judges the
/// means against the band estimated from `set`.
pub fn evaluate_models(
    dataset: &str,
    set: &RaterSet,
    models: &BTreeMap<String, BTreeMap<String, LabelGrid>>,
    metric: impl Into<MetricConfig>,
    boot: &BootstrapSpec,
    reference: &Reference,
) -> Result<PgtReport, PgtError> {
    let metric = metric.into();
    let band = estimate_band(set, metric, boot)?;
    evaluate_against_band(dataset, set, models, metric, band, reference)
}

/// As [`evaluate_models`] with a band computed elsewhere, e.g. with a
/// non-default inter-rater mode. The report's seed is the band's.
pub fn evaluate_against_band(
    dataset: &str,
    set: &RaterSet,
    models: &BTreeMap<String, BTreeMap<String, LabelGrid>>,
    metric: impl Into<MetricConfig>,
    band: PgtBand,
    reference: &Reference,
) -> Result<PgtReport, PgtError> {
    let metric = metric.into();
    let item_ids: Vec<&str> = set.items().map(|(id, _)| id).collect();
    let references: Vec<&LabelGrid> = item_ids
        .iter()
        .map(|&id| {
            reference
                .grid(set, id)
                .ok_or_else(|| PgtError::MissingReference {
                    item: id.to_string(),
                    reference: reference.name(),
                })
        })
        .collect::<Result<_, _>>()?;

    let mut reports = Vec::with_capacity(models.len());
    let mut n_undefined_model_items = 0;
    for (model_id, outputs) in models {
        let missing: Vec<String> = item_ids
            .iter()
            .filter(|id| !outputs.contains_key(**id))
            .map(|id| id.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(PgtError::MissingItems {
                model: model_id.clone(),
                items: missing,
            });
        }
        let scores: Vec<Option<f64>> = item_ids
            .par_iter()
            .zip(references.par_iter())
            .map(|(&id, &r)| {
                metric
                    .evaluate(&outputs[id], r)
                    .map(|m| m.value)
                    .map_err(|source| PgtError::Metric {
                        model: model_id.clone(),
                        item: id.to_string(),
                        source,
                    })
            })
            .collect::<Result<_, _>>()?;
        let mut defined: Vec<f64> = scores.iter().flatten().copied().collect();
        n_undefined_model_items += scores.len() - defined.len();
        if defined.is_empty() {
            return Err(PgtError::AllUndefined {
                model: model_id.clone(),
            });
        }
        let mean_score = stable_mean(&mut defined);
        let similarity = metric.metric.to_similarity(mean_score);
        let verdict = classify_score(similarity, &band);
        reports.push(ModelReport {
            model_id: model_id.clone(),
            mean_score,
            similarity,
            verdict: verdict.class,
            margin: verdict.margin,
            band_unreliable: verdict.band_unreliable,
            per_item: item_ids
                .iter()
                .zip(scores)
                .map(|(id, score)| ItemScore {
                    item_id: id.to_string(),
                    score,
                })
                .collect(),
        });
    }
    Ok(PgtReport {
        version: crate::VERSION.to_string(),
        dataset: dataset.to_string(),
        metric: metric.metric,
        seed: band.lower.seed,
        reference: reference.name(),
        diagnostics: Diagnostics {
            n_undefined_pairs: band.lower.n_undefined + band.upper.n_undefined,
            n_undefined_model_items,
        },
        band,
        models: reports,
    })
}
