//! Inter- and intra-rater reliability of multi-rater annotation sets.
//!
//! Reliability is the mean pairwise similarity under a chosen metric:
//! between different raters for the inter-rater estimate, between repeated
//! annotations by the same rater for the intra-rater estimate. Pair values
//! are averaged per item, items are weighted equally, and the confidence
//! interval comes from a percentile bootstrap over items.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::LabelGrid;
use crate::metrics::{MetricConfig, MetricError, MetricId};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReliabilityError {
    #[error("inter-rater undefined: no item has two or more raters")]
    InterUndefined,
    #[error("intra-rater undefined: no (item, rater) has two or more repeats")]
    IntraUndefined,
    #[error("{0} reliability undefined: metric undefined on every pair")]
    AllPairsUndefined(ReliabilityKind),
    #[error("item `{item}`: {source}")]
    Metric {
        item: String,
        #[source]
        source: MetricError,
    },
    #[error("`{0}` cannot be evaluated pairwise")]
    NotPairwise(MetricId),
    #[error("item `{item}` already has an annotation for rater `{rater}` repeat {repeat}")]
    Duplicate {
        item: String,
        rater: String,
        repeat: u32,
    },
    #[error("item `{item}`: grid dims {got:?} differ from {expected:?}")]
    Geometry {
        item: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("bootstrap: {0}")]
    Bootstrap(&'static str),
}

/// Annotations of one item, keyed by `(rater_id, repeat_index)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Item {
    pub annotations: BTreeMap<(String, u32), LabelGrid>,
    /// Hidden truth, only known in simulation.
    pub truth: Option<LabelGrid>,
}

impl Item {
    /// Distinct raters, sorted.
    pub fn raters(&self) -> Vec<&str> {
        let mut r: Vec<&str> = self.annotations.keys().map(|k| k.0.as_str()).collect();
        r.dedup();
        r
    }

    pub fn repeats_of<'a>(&'a self, rater: &'a str) -> impl Iterator<Item = (u32, &'a LabelGrid)> {
        self.annotations
            .iter()
            .filter(move |((r, _), _)| r == rater)
            .map(|((_, k), g)| (*k, g))
    }

    pub fn get(&self, rater: &str, repeat: u32) -> Option<&LabelGrid> {
        self.annotations.get(&(rater.to_string(), repeat))
    }

    fn dims(&self) -> Option<&[usize]> {
        self.annotations
            .values()
            .next()
            .or(self.truth.as_ref())
            .map(|g| g.dims())
    }
}

/// Annotations indexed by `(item, rater, repeat)`. Items iterate in id order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RaterSet {
    items: BTreeMap<String, Item>,
}

impl RaterSet {
    pub fn new() -> Self {
        Self::default()
    }

    fn check_dims(&self, item: &str, grid: &LabelGrid) -> Result<(), ReliabilityError> {
        if let Some(expected) = self.items.get(item).and_then(Item::dims) {
            if expected != grid.dims() {
                return Err(ReliabilityError::Geometry {
                    item: item.to_string(),
                    expected: expected.to_vec(),
                    got: grid.dims().to_vec(),
                });
            }
        }
        Ok(())
    }

    pub fn insert(
        &mut self,
        item: &str,
        rater: &str,
        repeat: u32,
        grid: LabelGrid,
    ) -> Result<(), ReliabilityError> {
        self.check_dims(item, &grid)?;
        let entry = self.items.entry(item.to_string()).or_default();
        let key = (rater.to_string(), repeat);
        if entry.annotations.contains_key(&key) {
            return Err(ReliabilityError::Duplicate {
                item: item.to_string(),
                rater: rater.to_string(),
                repeat,
            });
        }
        entry.annotations.insert(key, grid);
        Ok(())
    }

    pub fn set_truth(&mut self, item: &str, grid: LabelGrid) -> Result<(), ReliabilityError> {
        self.check_dims(item, &grid)?;
        self.items.entry(item.to_string()).or_default().truth = Some(grid);
        Ok(())
    }

    pub fn items(&self) -> impl Iterator<Item = (&str, &Item)> {
        self.items.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn item(&self, id: &str) -> Option<&Item> {
        self.items.get(id)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Distinct rater ids across all items, sorted.
    pub fn raters(&self) -> Vec<String> {
        let mut all: Vec<String> = self
            .items
            .values()
            .flat_map(|i| i.annotations.keys().map(|k| k.0.clone()))
            .collect();
        all.sort();
        all.dedup();
        all
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReliabilityKind {
    Inter,
    Intra,
}

impl std::fmt::Display for ReliabilityKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReliabilityKind::Inter => "inter-rater",
            ReliabilityKind::Intra => "intra-rater",
        })
    }
}

/// Which annotations enter the inter-rater comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterMode {
    /// Only repeat 0 of each rater, so within-rater variation stays out of
    /// the lower bound.
    #[default]
    RepeatZero,
    /// Every repeat combination of each rater pair, averaged per pair.
    MeanOverRepeats,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSpec {
    pub n_resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapSpec {
    fn default() -> Self {
        Self {
            n_resamples: 1000,
            level: 0.95,
            seed: 0,
        }
    }
}

impl BootstrapSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReliabilityEstimate {
    pub kind: ReliabilityKind,
    pub metric: MetricId,
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_items: usize,
    pub n_pairs: usize,
    pub n_undefined: usize,
    pub seed: u64,
    /// Per-item means in item-id order.
    #[serde(skip)]
    pub per_item: Vec<(String, f64)>,
}

/// Order-independent mean: values are sorted before summation so any
/// permutation of the input yields the identical float.
pub(crate) fn stable_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

/// Percentile bootstrap interval of the mean, resampling scores with
/// replacement. Resample `r` draws from its own stream, so the result does not
/// depend on evaluation order.
pub fn bootstrap_ci(scores: &[f64], spec: &BootstrapSpec) -> Result<(f64, f64), ReliabilityError> {
    if scores.is_empty() {
        return Err(ReliabilityError::Bootstrap("no scores to resample"));
    }
    if spec.n_resamples < 100 {
        return Err(ReliabilityError::Bootstrap(
            "at least 100 resamples required",
        ));
    }
    if !(spec.level > 0.0 && spec.level < 1.0) {
        return Err(ReliabilityError::Bootstrap("level must lie in (0, 1)"));
    }
    let n = scores.len();
    let mut means: Vec<f64> = (0..spec.n_resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(spec.seed, "bootstrap", r as u64);
            let sum: f64 = (0..n).map(|_| scores[rng.random_range(0..n)]).sum();
            sum / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - spec.level) / 2.0;
    // resample means cannot leave [min, max]; clamping absorbs rounding
    let lo_bound = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi_bound = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let low = nearest_rank(&means, tail).clamp(lo_bound, hi_bound);
    let high = nearest_rank(&means, 1.0 - tail).clamp(lo_bound, hi_bound);
    Ok((low, high))
}

struct Tally {
    per_item: Vec<(String, f64)>,
    n_pairs: usize,
    n_undefined: usize,
}

type PairJob<'a> = (usize, &'a LabelGrid, &'a LabelGrid);

/// Evaluates jobs in parallel; results come back in job order.
fn evaluate_jobs(
    jobs: &[PairJob<'_>],
    metric: &MetricConfig,
    item_ids: &[&str],
) -> Result<Vec<Option<f64>>, ReliabilityError> {
    jobs.par_iter()
        .map(|&(item, a, b)| {
            metric
                .evaluate(a, b)
                .map(|r| r.value)
                .map_err(|source| ReliabilityError::Metric {
                    item: item_ids[item].to_string(),
                    source,
                })
        })
        .collect()
}

/// Averages the defined values of each group, tracking counts.
fn mean_defined(
    values: &[Option<f64>],
    n_pairs: &mut usize,
    n_undefined: &mut usize,
) -> Option<f64> {
    let mut defined: Vec<f64> = values.iter().flatten().copied().collect();
    *n_pairs += defined.len();
    *n_undefined += values.len() - defined.len();
    (!defined.is_empty()).then(|| stable_mean(&mut defined))
}

fn inter_tally(
    set: &RaterSet,
    metric: &MetricConfig,
    mode: InterMode,
) -> Result<Tally, ReliabilityError> {
    let item_ids: Vec<&str> = set.items.keys().map(String::as_str).collect();
    // (item index, rater pair index) → list of job indices
    let mut jobs: Vec<PairJob<'_>> = Vec::new();
    let mut groups: Vec<(usize, Vec<std::ops::Range<usize>>)> = Vec::new();
    for (idx, item) in set.items.values().enumerate() {
        let raters: Vec<&str> = match mode {
            InterMode::RepeatZero => item
                .raters()
                .into_iter()
                .filter(|r| item.get(r, 0).is_some())
                .collect(),
            InterMode::MeanOverRepeats => item.raters(),
        };
        if raters.len() < 2 {
            continue;
        }
        let mut pairs = Vec::new();
        for i in 0..raters.len() {
            for j in i + 1..raters.len() {
                let start = jobs.len();
                match mode {
                    InterMode::RepeatZero => {
                        jobs.push((
                            idx,
                            item.get(raters[i], 0).unwrap(),
                            item.get(raters[j], 0).unwrap(),
                        ));
                    }
                    InterMode::MeanOverRepeats => {
                        for (_, a) in item.repeats_of(raters[i]) {
                            for (_, b) in item.repeats_of(raters[j]) {
                                jobs.push((idx, a, b));
                            }
                        }
                    }
                }
                pairs.push(start..jobs.len());
            }
        }
        groups.push((idx, pairs));
    }
    if groups.is_empty() {
        return Err(ReliabilityError::InterUndefined);
    }
    let values = evaluate_jobs(&jobs, metric, &item_ids)?;
    let mut tally = Tally {
        per_item: Vec::new(),
        n_pairs: 0,
        n_undefined: 0,
    };
    for (idx, pairs) in groups {
        let mut pair_means: Vec<f64> = Vec::new();
        for range in pairs {
            let (mut p, mut u) = (0, 0);
            if let Some(m) = mean_defined(&values[range], &mut p, &mut u) {
                pair_means.push(m);
                tally.n_pairs += 1;
            } else {
                tally.n_undefined += 1;
            }
        }
        if !pair_means.is_empty() {
            tally
                .per_item
                .push((item_ids[idx].to_string(), stable_mean(&mut pair_means)));
        }
    }
    Ok(tally)
}

fn intra_tally(set: &RaterSet, metric: &MetricConfig) -> Result<Tally, ReliabilityError> {
    let item_ids: Vec<&str> = set.items.keys().map(String::as_str).collect();
    let mut jobs: Vec<PairJob<'_>> = Vec::new();
    // item index → per-rater job ranges
    let mut groups: Vec<(usize, Vec<std::ops::Range<usize>>)> = Vec::new();
    for (idx, item) in set.items.values().enumerate() {
        let mut raters = Vec::new();
        for r in item.raters() {
            let reps: Vec<&LabelGrid> = item.repeats_of(r).map(|(_, g)| g).collect();
            if reps.len() < 2 {
                continue;
            }
            let start = jobs.len();
            for i in 0..reps.len() {
                for j in i + 1..reps.len() {
                    jobs.push((idx, reps[i], reps[j]));
                }
            }
            raters.push(start..jobs.len());
        }
        if !raters.is_empty() {
            groups.push((idx, raters));
        }
    }
    if groups.is_empty() {
        return Err(ReliabilityError::IntraUndefined);
    }
    let values = evaluate_jobs(&jobs, metric, &item_ids)?;
    let mut tally = Tally {
        per_item: Vec::new(),
        n_pairs: 0,
        n_undefined: 0,
    };
    for (idx, raters) in groups {
        let mut rater_means: Vec<f64> = raters
            .into_iter()
            .filter_map(|range| {
                mean_defined(&values[range], &mut tally.n_pairs, &mut tally.n_undefined)
            })
            .collect();
        if !rater_means.is_empty() {
            tally
                .per_item
                .push((item_ids[idx].to_string(), stable_mean(&mut rater_means)));
        }
    }
    Ok(tally)
}

fn finish(
    kind: ReliabilityKind,
    metric: MetricId,
    tally: Tally,
    boot: &BootstrapSpec,
) -> Result<ReliabilityEstimate, ReliabilityError> {
    if tally.per_item.is_empty() {
        return Err(ReliabilityError::AllPairsUndefined(kind));
    }
    let scores: Vec<f64> = tally.per_item.iter().map(|s| s.1).collect();
    let point = stable_mean(&mut scores.clone());
    let (low, high) = bootstrap_ci(&scores, boot)?;
    Ok(ReliabilityEstimate {
        kind,
        metric,
        point,
        ci_low: low.min(point),
        ci_high: high.max(point),
        n_items: tally.per_item.len(),
        n_pairs: tally.n_pairs,
        n_undefined: tally.n_undefined,
        seed: boot.seed,
        per_item: tally.per_item,
    })
}

fn pairwise_config(metric: impl Into<MetricConfig>) -> Result<MetricConfig, ReliabilityError> {
    let metric = metric.into();
    if !metric.metric.is_pairwise() {
        return Err(ReliabilityError::NotPairwise(metric.metric));
    }
    Ok(metric)
}

/// Inter-rater reliability using repeat 0 of every rater.
pub fn inter_rater(
    set: &RaterSet,
    metric: impl Into<MetricConfig>,
    boot: &BootstrapSpec,
) -> Result<ReliabilityEstimate, ReliabilityError> {
    inter_rater_with(set, metric, boot, InterMode::RepeatZero)
}

pub fn inter_rater_with(
    set: &RaterSet,
    metric: impl Into<MetricConfig>,
    boot: &BootstrapSpec,
    mode: InterMode,
) -> Result<ReliabilityEstimate, ReliabilityError> {
    let metric = pairwise_config(metric)?;
    let tally = inter_tally(set, &metric, mode)?;
    finish(ReliabilityKind::Inter, metric.metric, tally, boot)
}

/// Intra-rater reliability over every `(item, rater)` with two or more repeats.
pub fn intra_rater(
    set: &RaterSet,
    metric: impl Into<MetricConfig>,
    boot: &BootstrapSpec,
) -> Result<ReliabilityEstimate, ReliabilityError> {
    let metric = pairwise_config(metric)?;
    let tally = intra_tally(set, &metric)?;
    finish(ReliabilityKind::Intra, metric.metric, tally, boot)
}
