//! Consensus references from several annotations: per-voxel majority vote and
//! STAPLE-style expectation-maximization fusion of binary masks.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::grid::{BinaryMask, GridError, Label, LabelGrid};

const CLAMP: f64 = 1e-6;
// slack for the per-iteration likelihood check; EM guarantees monotonicity
// only up to float rounding
const LL_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConsensusError {
    #[error("no annotations to fuse")]
    Empty,
    #[error("fusion needs at least 2 masks, got {0}")]
    TooFewMasks(usize),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid parameter: {0}")]
    Param(String),
}

/// Per-voxel majority label; ties go to the smallest label.
pub fn majority_vote(grids: &[LabelGrid]) -> Result<LabelGrid, ConsensusError> {
    let first = grids.first().ok_or(ConsensusError::Empty)?;
    for g in &grids[1..] {
        first.same_geometry(g)?;
    }
    let mut votes = Vec::with_capacity(grids.len());
    let voxels = (0..first.len())
        .map(|i| {
            votes.clear();
            votes.extend(grids.iter().map(|g| g.voxels()[i]));
            votes.sort_unstable();
            let (mut best, mut best_n) = (votes[0], 0);
            let mut run = 0;
            for (k, &v) in votes.iter().enumerate() {
                run = if k > 0 && votes[k - 1] == v {
                    run + 1
                } else {
                    1
                };
                if run > best_n {
                    best = v;
                    best_n = run;
                }
            }
            best
        })
        .collect();
    let max_label = grids.iter().map(LabelGrid::max_label).max().unwrap_or(0);
    Ok(
        LabelGrid::with_max_label(first.dims().to_vec(), voxels, max_label)?
            .with_spacing(first.spacing().to_vec())?,
    )
}

/// Posterior foreground probability per voxel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SoftConsensus {
    pub dims: Vec<usize>,
    pub spacing: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RaterPerformance {
    /// Position of the rater's mask in the input list.
    pub rater: usize,
    /// Sensitivity.
    pub p: f64,
    /// Specificity.
    pub q: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StapleParams {
    /// Foreground prevalence; `None` uses the mean foreground fraction.
    pub prior: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub init_p: f64,
    pub init_q: f64,
}

impl Default for StapleParams {
    fn default() -> Self {
        Self {
            prior: None,
            tol: 1e-6,
            max_iter: 100,
            init_p: 0.9,
            init_q: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StapleResult {
    pub consensus: SoftConsensus,
    pub performance: Vec<RaterPerformance>,
    pub converged: bool,
    pub iterations: usize,
    /// Observed-data log-likelihood before each M-step and at the end.
    pub log_likelihood: Vec<f64>,
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Voxels grouped by their vector of rater decisions. Patterns are numbered
/// in order of first appearance, which keeps all reductions in voxel order.
struct Patterns {
    bits: Vec<Vec<bool>>,
    counts: Vec<f64>,
    of_voxel: Vec<u32>,
}

impl Patterns {
    fn new(masks: &[BinaryMask]) -> Self {
        let n = masks[0].bits().len();
        let mut index: BTreeMap<Vec<bool>, u32> = BTreeMap::new();
        let mut bits = Vec::new();
        let mut counts = Vec::new();
        let mut of_voxel = Vec::with_capacity(n);
        let mut key = Vec::with_capacity(masks.len());
        for i in 0..n {
            key.clear();
            key.extend(masks.iter().map(|m| m.bits()[i]));
            let id = *index.entry(key.clone()).or_insert_with(|| {
                bits.push(key.clone());
                counts.push(0.0);
                (bits.len() - 1) as u32
            });
            counts[id as usize] += 1.0;
            of_voxel.push(id);
        }
        Self {
            bits,
            counts,
            of_voxel,
        }
    }

    /// Posterior weight per pattern and the log-likelihood.
    fn e_step(&self, prior: f64, p: &[f64], q: &[f64]) -> (Vec<f64>, f64) {
        let (lf, lb) = (prior.ln(), (1.0 - prior).ln());
        let mut ll = 0.0;
        let w = self
            .bits
            .iter()
            .zip(&self.counts)
            .map(|(d, &c)| {
                let mut a = lf;
                let mut b = lb;
                for (j, &on) in d.iter().enumerate() {
                    if on {
                        a += p[j].ln();
                        b += (1.0 - q[j]).ln();
                    } else {
                        a += (1.0 - p[j]).ln();
                        b += q[j].ln();
                    }
                }
                ll += c * log_sum_exp(a, b);
                1.0 / (1.0 + (b - a).exp())
            })
            .collect();
        (w, ll)
    }

    fn m_step(&self, w: &[f64], p: &mut [f64], q: &mut [f64]) {
        for j in 0..p.len() {
            let (mut tp, mut fg, mut tn, mut bg) = (0.0, 0.0, 0.0, 0.0);
            for ((d, &c), &wi) in self.bits.iter().zip(&self.counts).zip(w) {
                fg += c * wi;
                bg += c * (1.0 - wi);
                if d[j] {
                    tp += c * wi;
                } else {
                    tn += c * (1.0 - wi);
                }
            }
            if fg > 0.0 {
                p[j] = (tp / fg).clamp(CLAMP, 1.0 - CLAMP);
            }
            if bg > 0.0 {
                q[j] = (tn / bg).clamp(CLAMP, 1.0 - CLAMP);
            }
        }
    }
}

fn check_masks(masks: &[BinaryMask]) -> Result<(), ConsensusError> {
    if masks.len() < 2 {
        return Err(ConsensusError::TooFewMasks(masks.len()));
    }
    for m in &masks[1..] {
        masks[0].same_geometry(m)?;
    }
    Ok(())
}

fn check_params(params: &StapleParams) -> Result<(), ConsensusError> {
    let open_half = |x: f64| x > 0.5 && x < 1.0;
    if !(params.tol > 0.0) {
        return Err(ConsensusError::Param(format!(
            "tol must be > 0, got {}",
            params.tol
        )));
    }
    if !open_half(params.init_p) || !open_half(params.init_q) {
        return Err(ConsensusError::Param(format!(
            "init_p and init_q must lie in (0.5, 1), got {} and {}",
            params.init_p, params.init_q
        )));
    }
    if let Some(f) = params.prior {
        if !(f > 0.0 && f < 1.0) {
            return Err(ConsensusError::Param(format!(
                "prior must lie in (0, 1), got {f}"
            )));
        }
    }
    Ok(())
}

/// Binary EM fusion. Alternates posterior foreground weights (E-step) with
/// per-rater sensitivity/specificity re-estimation (M-step) until the largest
/// parameter change drops below `tol` or `max_iter` M-steps have run.
pub fn staple_fuse(
    masks: &[BinaryMask],
    params: &StapleParams,
) -> Result<StapleResult, ConsensusError> {
    check_masks(masks)?;
    check_params(params)?;
    let k = masks.len();
    let consensus = |weights: Vec<f64>| SoftConsensus {
        dims: masks[0].dims().to_vec(),
        spacing: masks[0].spacing().to_vec(),
        weights,
    };

    if masks[1..].iter().all(|m| m.bits() == masks[0].bits()) {
        let w = masks[0].bits().iter().map(|&b| b as u8 as f64).collect();
        return Ok(StapleResult {
            consensus: consensus(w),
            performance: (0..k)
                .map(|rater| RaterPerformance {
                    rater,
                    p: 1.0 - CLAMP,
                    q: 1.0 - CLAMP,
                })
                .collect(),
            converged: true,
            iterations: 0,
            log_likelihood: vec![],
        });
    }

    let prior = params.prior.unwrap_or_else(|| {
        let n = masks[0].bits().len() as f64;
        masks.iter().map(|m| m.count() as f64 / n).sum::<f64>() / k as f64
    });
    let pats = Patterns::new(masks);
    let mut p = vec![params.init_p; k];
    let mut q = vec![params.init_q; k];
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < params.max_iter {
        let (w, ll) = pats.e_step(prior, &p, &q);
        if let Some(&prev) = trace.last() {
            debug_assert!(ll >= prev - LL_SLACK * prev.abs().max(1.0), "{ll} < {prev}");
        }
        trace.push(ll);
        let (old_p, old_q) = (p.clone(), q.clone());
        pats.m_step(&w, &mut p, &mut q);
        iterations += 1;
        let delta = old_p
            .iter()
            .zip(&p)
            .chain(old_q.iter().zip(&q))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if delta < params.tol {
            converged = true;
            break;
        }
    }
    let (w, ll) = pats.e_step(prior, &p, &q);
    if let Some(&prev) = trace.last() {
        debug_assert!(ll >= prev - LL_SLACK * prev.abs().max(1.0), "{ll} < {prev}");
    }
    trace.push(ll);
    Ok(StapleResult {
        consensus: consensus(pats.of_voxel.iter().map(|&id| w[id as usize]).collect()),
        performance: p
            .iter()
            .zip(&q)
            .enumerate()
            .map(|(rater, (&p, &q))| RaterPerformance { rater, p, q })
            .collect(),
        converged,
        iterations,
        log_likelihood: trace,
    })
}

/// Foreground where the weight is at least `t`.
pub fn threshold_soft(w: &SoftConsensus, t: f64) -> BinaryMask {
    BinaryMask::new(w.dims.clone(), w.weights.iter().map(|&x| x >= t).collect())
        .and_then(|m| m.with_spacing(w.spacing.clone()))
        .expect("soft consensus geometry is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelFusion {
    pub grid: LabelGrid,
    /// One EM run per label (a single run for binary input).
    pub per_label: Vec<(Label, StapleResult)>,
}

/// EM fusion of label grids. Binary input runs one fusion and thresholds at
/// 0.5. Multi-label input runs one-vs-rest per label (background included)
/// and takes the per-voxel argmax of the posteriors, ties to the smallest
/// label.
pub fn staple_fuse_labels(
    grids: &[LabelGrid],
    params: &StapleParams,
) -> Result<LabelFusion, ConsensusError> {
    let first = grids.first().ok_or(ConsensusError::Empty)?;
    for g in &grids[1..] {
        first.same_geometry(g)?;
    }
    let max_label = grids.iter().map(LabelGrid::max_label).max().unwrap_or(0);
    let present: Vec<Label> = {
        let mut all: Vec<Label> = grids.iter().flat_map(|g| g.labels_present()).collect();
        all.sort_unstable();
        all.dedup();
        all
    };
    let finish = |voxels: Vec<Label>| -> Result<LabelGrid, ConsensusError> {
        Ok(
            LabelGrid::with_max_label(first.dims().to_vec(), voxels, max_label)?
                .with_spacing(first.spacing().to_vec())?,
        )
    };

    if present.iter().all(|&l| l <= 1) {
        let masks: Vec<BinaryMask> = grids.iter().map(|g| g.mask_of(1)).collect();
        let r = staple_fuse(&masks, params)?;
        let voxels = threshold_soft(&r.consensus, 0.5)
            .bits()
            .iter()
            .map(|&b| b as Label)
            .collect();
        return Ok(LabelFusion {
            grid: finish(voxels)?,
            per_label: vec![(1, r)],
        });
    }

    let mut per_label = Vec::with_capacity(present.len());
    for &l in &present {
        let masks: Vec<BinaryMask> = grids.iter().map(|g| g.mask_of(l)).collect();
        per_label.push((l, staple_fuse(&masks, params)?));
    }
    let voxels = (0..first.len())
        .map(|i| {
            let mut best = (present[0], f64::NEG_INFINITY);
            for (l, r) in &per_label {
                let w = r.consensus.weights[i];
                if w > best.1 {
                    best = (*l, w);
                }
            }
            best.0
        })
        .collect();
    Ok(LabelFusion {
        grid: finish(voxels)?,
        per_label,
    })
}
