//! Synthetic experiments: blob phantoms as hidden truth, noisy raters, and a
//! family of model outputs that first learns the truth and then the
//! reference's annotation noise.
//!
//! Every function is a pure function of its spec and seed. Randomness comes
//! from [`crate::rng::stream`] keyed by purpose, so parallel scheduling never
//! changes a result.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::{majority_vote, staple_fuse_labels, ConsensusError, StapleParams};
use crate::grid::{strides, BinaryMask, GridError, Label, LabelGrid};
use crate::metrics::{MetricConfig, MetricError, MetricId};
use crate::pgt::{estimate_band, PgtBand, PgtError};
use crate::reliability::{BootstrapSpec, RaterSet, ReliabilityError};
use crate::rng::{derive_seed, stream};

const PHANTOM_ATTEMPTS: u64 = 10;
const MIN_FOREGROUND: f64 = 0.05;
const MAX_FOREGROUND: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error("foreground fraction outside [{MIN_FOREGROUND}, {MAX_FOREGROUND}] after {PHANTOM_ATTEMPTS} attempts (last {last:.4})")]
    PhantomInfeasible { last: f64 },
    #[error("metric undefined at t = {t}")]
    UndefinedCurveValue { t: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Reliability(#[from] ReliabilityError),
    #[error(transparent)]
    Pgt(#[from] PgtError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
}

fn spec_err(msg: impl Into<String>) -> SimError {
    SimError::Spec(msg.into())
}

fn for_each_neighbor(i: usize, dims: &[usize], st: &[usize], mut f: impl FnMut(usize)) {
    for axis in 0..dims.len() {
        let c = (i / st[axis]) % dims[axis];
        if c > 0 {
            f(i - st[axis]);
        }
        if c + 1 < dims[axis] {
            f(i + st[axis]);
        }
    }
}

fn coords(mut i: usize, dims: &[usize]) -> Vec<usize> {
    let mut c = vec![0; dims.len()];
    for axis in (0..dims.len()).rev() {
        c[axis] = i % dims[axis];
        i /= dims[axis];
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: Vec<usize>,
    pub n_blobs: usize,
    /// Radius range in voxels, inclusive.
    pub blob_radius_range: (f64, f64),
    /// Neighbor-mean smoothing passes applied before thresholding at 0.5.
    pub smoothing: usize,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: vec![128, 128],
            n_blobs: 6,
            blob_radius_range: (8.0, 20.0),
            smoothing: 2,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    fn validate(&self) -> Result<(), SimError> {
        if !(2..=3).contains(&self.dims.len()) || self.dims.contains(&0) {
            return Err(spec_err(format!(
                "dims must be 2 or 3 positive extents, got {:?}",
                self.dims
            )));
        }
        if self.n_blobs == 0 || self.n_blobs > Label::MAX as usize {
            return Err(spec_err("n_blobs must be at least 1"));
        }
        let (lo, hi) = self.blob_radius_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(spec_err(format!("bad blob_radius_range ({lo}, {hi})")));
        }
        if let Some(&d) = self.dims.iter().find(|&&d| 2.0 * hi > (d - 1) as f64) {
            return Err(spec_err(format!(
                "blobs of radius {hi} do not fit in extent {d}"
            )));
        }
        Ok(())
    }
}

struct Blob {
    center: Vec<f64>,
    radius: f64,
}

fn place_blobs(spec: &PhantomSpec, seed: u64) -> Vec<Blob> {
    let mut rng = stream(seed, "blobs", 0);
    let (lo, hi) = spec.blob_radius_range;
    (0..spec.n_blobs)
        .map(|_| {
            let radius = if lo == hi {
                lo
            } else {
                rng.random_range(lo..=hi)
            };
            let center = spec
                .dims
                .iter()
                .map(|&d| {
                    let top = (d - 1) as f64 - radius;
                    if top > radius {
                        rng.random_range(radius..=top)
                    } else {
                        radius
                    }
                })
                .collect();
            Blob { center, radius }
        })
        .collect()
}

fn render(spec: &PhantomSpec, blobs: &[Blob]) -> Vec<Label> {
    let dims = &spec.dims;
    let n: usize = dims.iter().product();
    let st = strides(dims);
    // normalized squared distance to the nearest blob (by radius) per voxel
    let nearest: Vec<(usize, f64)> = (0..n)
        .map(|i| {
            let c = coords(i, dims);
            blobs
                .iter()
                .enumerate()
                .map(|(b, blob)| {
                    let d2: f64 = c
                        .iter()
                        .zip(&blob.center)
                        .map(|(&x, &m)| (x as f64 - m).powi(2))
                        .sum();
                    (b, d2 / (blob.radius * blob.radius))
                })
                .fold(
                    (0, f64::INFINITY),
                    |best, cur| if cur.1 < best.1 { cur } else { best },
                )
        })
        .collect();
    let mut field: Vec<f64> = nearest
        .iter()
        .map(|&(_, r)| (r <= 1.0) as u8 as f64)
        .collect();
    for _ in 0..spec.smoothing {
        field = (0..n)
            .map(|i| {
                let (mut sum, mut cnt) = (field[i], 1.0);
                for_each_neighbor(i, dims, &st, |j| {
                    sum += field[j];
                    cnt += 1.0;
                });
                sum / cnt
            })
            .collect();
    }
    field
        .iter()
        .zip(&nearest)
        .map(|(&f, &(b, _))| if f >= 0.5 { b as Label + 1 } else { 0 })
        .collect()
}

/// Union of balls, smoothed and thresholded, labeled by nearest blob. Retries
/// with derived seeds when the foreground fraction is out of range.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<LabelGrid, SimError> {
    spec.validate()?;
    let mut last = 0.0;
    for attempt in 0..PHANTOM_ATTEMPTS {
        let seed = derive_seed(spec.seed, "phantom", attempt);
        let voxels = render(spec, &place_blobs(spec, seed));
        let fg = voxels.iter().filter(|&&v| v != 0).count() as f64 / voxels.len() as f64;
        if (MIN_FOREGROUND..=MAX_FOREGROUND).contains(&fg) {
            return Ok(LabelGrid::with_max_label(
                spec.dims.clone(),
                voxels,
                spec.n_blobs as Label,
            )?);
        }
        last = fg;
    }
    Err(SimError::PhantomInfeasible { last })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RaterNoiseModel {
    /// Per-voxel probability of replacing the label with a different one.
    pub flip_prob: f64,
    /// Largest dilate/erode radius drawn per instance.
    pub boundary_jitter: usize,
    /// Shift in voxels applied to the whole annotation; empty means none.
    pub bias: Vec<i64>,
    /// Flip probability applied on top of the rater's base for repeats.
    pub repeat_flip_prob: f64,
}

impl RaterNoiseModel {
    fn validate(&self, ndim: usize) -> Result<(), SimError> {
        for (name, p) in [
            ("flip_prob", self.flip_prob),
            ("repeat_flip_prob", self.repeat_flip_prob),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(spec_err(format!("{name} must lie in [0, 1), got {p}")));
            }
        }
        if !self.bias.is_empty() && self.bias.len() != ndim {
            return Err(spec_err(format!(
                "bias has {} components for a {ndim}-d grid",
                self.bias.len()
            )));
        }
        Ok(())
    }
}

fn shift(voxels: &[Label], dims: &[usize], bias: &[i64]) -> Vec<Label> {
    if bias.iter().all(|&b| b == 0) {
        return voxels.to_vec();
    }
    let st = strides(dims);
    (0..voxels.len())
        .map(|i| {
            let c = coords(i, dims);
            let mut src = 0;
            for axis in 0..dims.len() {
                let s = c[axis] as i64 - bias[axis];
                if s < 0 || s >= dims[axis] as i64 {
                    return 0;
                }
                src += s as usize * st[axis];
            }
            voxels[src]
        })
        .collect()
}

fn dilate(v: &mut [Label], label: Label, dims: &[usize], st: &[usize]) {
    let grow: Vec<usize> = (0..v.len())
        .filter(|&i| {
            let mut hit = false;
            if v[i] == 0 {
                for_each_neighbor(i, dims, st, |j| hit |= v[j] == label);
            }
            hit
        })
        .collect();
    for i in grow {
        v[i] = label;
    }
}

fn erode(v: &mut [Label], label: Label, dims: &[usize], st: &[usize]) {
    let shrink: Vec<usize> = (0..v.len())
        .filter(|&i| {
            let mut edge = false;
            if v[i] == label {
                for_each_neighbor(i, dims, st, |j| edge |= v[j] != label);
            }
            edge
        })
        .collect();
    for i in shrink {
        v[i] = 0;
    }
}

fn flip(v: &mut [Label], prob: f64, max_label: Label, rng: &mut impl Rng) {
    if prob == 0.0 {
        return;
    }
    for x in v.iter_mut() {
        if rng.random::<f64>() < prob {
            let k = rng.random_range(0..max_label);
            *x = if k >= *x { k + 1 } else { k };
        }
    }
}

/// One rater's annotation of `truth`. Repeat 0 is the rater's base: bias
/// shift, per-instance jitter, then flips. Repeat `k > 0` re-flips that base
/// with `repeat_flip_prob`.
pub fn simulate_rater(
    truth: &LabelGrid,
    noise: &RaterNoiseModel,
    rater_seed: u64,
    repeat_index: u32,
) -> Result<LabelGrid, SimError> {
    let dims = truth.dims();
    noise.validate(dims.len())?;
    let st = strides(dims);
    let max_label = truth.max_label().max(1);
    let mut v = if noise.bias.is_empty() {
        truth.voxels().to_vec()
    } else {
        shift(truth.voxels(), dims, &noise.bias)
    };
    if noise.boundary_jitter > 0 {
        let mut rng = stream(rater_seed, "jitter", 0);
        for label in truth.labels_present().into_iter().filter(|&l| l != 0) {
            let r = rng.random_range(0..=noise.boundary_jitter);
            let grow = rng.random::<bool>();
            for _ in 0..r {
                if grow {
                    dilate(&mut v, label, dims, &st);
                } else {
                    erode(&mut v, label, dims, &st);
                }
            }
        }
    }
    flip(
        &mut v,
        noise.flip_prob,
        max_label,
        &mut stream(rater_seed, "flip", 0),
    );
    if repeat_index > 0 {
        let mut rng = stream(rater_seed, "repeat", repeat_index as u64);
        flip(&mut v, noise.repeat_flip_prob, max_label, &mut rng);
    }
    Ok(truth.map_voxels(v)?)
}

/// Binary rater with given sensitivity and specificity.
pub fn simulate_binary_rater(
    truth: &BinaryMask,
    sensitivity: f64,
    specificity: f64,
    seed: u64,
) -> BinaryMask {
    let mut rng = stream(seed, "binary-rater", 0);
    let bits = truth
        .bits()
        .iter()
        .map(|&t| {
            let u = rng.random::<f64>();
            if t {
                u < sensitivity
            } else {
                u >= specificity
            }
        })
        .collect();
    BinaryMask::new(truth.dims().to_vec(), bits)
        .and_then(|m| m.with_spacing(truth.spacing().to_vec()))
        .expect("geometry copied from a valid mask")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySpec {
    /// Point where the truth-consistent structure is fully learned.
    pub t_signal: f64,
    pub n_steps: usize,
    /// Probability that an unlearned voxel holds a uniformly random label
    /// rather than background.
    pub init_noise: f64,
    pub seed: u64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            t_signal: 0.6,
            n_steps: 101,
            init_noise: 1.0,
            seed: 0,
        }
    }
}

impl TrajectorySpec {
    fn validate(&self) -> Result<(), SimError> {
        if !(self.t_signal > 0.0 && self.t_signal < 1.0) {
            return Err(spec_err(format!(
                "t_signal must lie in (0, 1), got {}",
                self.t_signal
            )));
        }
        if self.n_steps < 10 {
            return Err(spec_err(format!(
                "n_steps must be at least 10, got {}",
                self.n_steps
            )));
        }
        if !(0.0..=1.0).contains(&self.init_noise) {
            return Err(spec_err(format!(
                "init_noise must lie in [0, 1], got {}",
                self.init_noise
            )));
        }
        Ok(())
    }

    /// The `i`-th of `n_steps` equally spaced points of [0, 1].
    pub fn t_at(&self, i: usize) -> f64 {
        i as f64 / (self.n_steps - 1) as f64
    }
}

/// Per-voxel uniforms fixed for a trajectory seed. Sharing them across `t`
/// makes each voxel's adoption monotone along the trajectory.
struct Draws {
    signal: Vec<f64>,
    noise: Vec<f64>,
    init: Vec<Label>,
}

impl Draws {
    fn new(n: usize, traj: &TrajectorySpec, max_label: Label) -> Self {
        let mut rng = stream(traj.seed, "trajectory", 0);
        let mut d = Draws {
            signal: Vec::with_capacity(n),
            noise: Vec::with_capacity(n),
            init: Vec::with_capacity(n),
        };
        for _ in 0..n {
            d.signal.push(rng.random::<f64>());
            d.noise.push(rng.random::<f64>());
            let random_init = rng.random::<f64>() < traj.init_noise;
            let label = rng.random_range(0..=max_label);
            d.init.push(if random_init { label } else { 0 });
        }
        d
    }
}

fn check_pair(truth: &LabelGrid, reference: &LabelGrid) -> Result<Label, SimError> {
    truth.same_geometry(reference)?;
    Ok(truth.max_label().max(reference.max_label()).max(1))
}

fn output_at(
    truth: &LabelGrid,
    reference: &LabelGrid,
    draws: &Draws,
    traj: &TrajectorySpec,
    t: f64,
    max_label: Label,
) -> LabelGrid {
    let signal = (t / traj.t_signal).min(1.0);
    let noise = ((t - traj.t_signal) / (1.0 - traj.t_signal)).max(0.0);
    let voxels = truth
        .voxels()
        .iter()
        .zip(reference.voxels())
        .enumerate()
        .map(|(i, (&tr, &rf))| {
            if tr != rf && draws.noise[i] < noise {
                rf
            } else if draws.signal[i] < signal {
                tr
            } else {
                draws.init[i]
            }
        })
        .collect();
    LabelGrid::with_max_label(truth.dims().to_vec(), voxels, max_label)
        .and_then(|g| g.with_spacing(truth.spacing().to_vec()))
        .expect("geometry copied from a valid grid")
}

/// The simulated model's prediction at trajectory point `t`.
pub fn model_output(
    truth: &LabelGrid,
    reference: &LabelGrid,
    traj: &TrajectorySpec,
    t: f64,
) -> Result<LabelGrid, SimError> {
    traj.validate()?;
    if !(0.0..=1.0).contains(&t) {
        return Err(spec_err(format!("t must lie in [0, 1], got {t}")));
    }
    let max_label = check_pair(truth, reference)?;
    let draws = Draws::new(truth.len(), traj, max_label);
    Ok(output_at(truth, reference, &draws, traj, t, max_label))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveSample {
    pub t: f64,
    pub sim_to_reference: f64,
    /// Similarity to the hidden truth, standing in for real-world performance.
    pub sim_to_truth: f64,
}

/// Similarities along a trajectory, on the higher-is-better scale (distance
/// metrics mapped through `1 / (1 + d)`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PgtCurve {
    pub metric: MetricId,
    pub samples: Vec<CurveSample>,
}

impl PgtCurve {
    /// Sample with the highest similarity to truth; ties go to the smallest t.
    pub fn peak(&self) -> CurveSample {
        let mut best = self.samples[0];
        for s in &self.samples[1..] {
            if s.sim_to_truth > best.sim_to_truth {
                best = *s;
            }
        }
        best
    }
}

pub fn sweep_trajectory(
    truth: &LabelGrid,
    reference: &LabelGrid,
    traj: &TrajectorySpec,
    metric: impl Into<MetricConfig>,
) -> Result<PgtCurve, SimError> {
    let metric = metric.into();
    traj.validate()?;
    let max_label = check_pair(truth, reference)?;
    let draws = Draws::new(truth.len(), traj, max_label);
    let samples = (0..traj.n_steps)
        .into_par_iter()
        .map(|i| {
            let t = traj.t_at(i);
            let out = output_at(truth, reference, &draws, traj, t, max_label);
            let sim = |other: &LabelGrid| -> Result<f64, SimError> {
                let v = metric
                    .evaluate(&out, other)?
                    .value
                    .ok_or(SimError::UndefinedCurveValue { t })?;
                Ok(metric.metric.to_similarity(v))
            };
            Ok(CurveSample {
                t,
                sim_to_reference: sim(reference)?,
                sim_to_truth: sim(truth)?,
            })
        })
        .collect::<Result<_, SimError>>()?;
    Ok(PgtCurve {
        metric: metric.metric,
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    /// Repeat 0 of the first rater.
    #[default]
    SingleRater,
    MajorityVote,
    Staple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub phantom: PhantomSpec,
    pub noise: RaterNoiseModel,
    pub n_raters: usize,
    pub n_repeats: u32,
    pub trajectory: TrajectorySpec,
    pub metric: MetricConfig,
    pub bootstrap: BootstrapSpec,
    /// Containment tolerance on the similarity axis.
    pub tol: f64,
    pub reference: ReferenceMode,
    pub rater_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            phantom: PhantomSpec::default(),
            noise: RaterNoiseModel {
                flip_prob: 0.05,
                boundary_jitter: 0,
                bias: vec![],
                repeat_flip_prob: 0.02,
            },
            n_raters: 5,
            n_repeats: 2,
            trajectory: TrajectorySpec::default(),
            metric: MetricId::Dice.into(),
            bootstrap: BootstrapSpec::default(),
            tol: 0.05,
            reference: ReferenceMode::SingleRater,
            rater_seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Default configuration with every seed derived from `seed`.
    pub fn seeded(seed: u64) -> Self {
        Self::default().with_seed(seed)
    }

    /// Replaces every sub-seed with one derived from `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.phantom.seed = derive_seed(seed, "phantom", 0);
        self.trajectory.seed = derive_seed(seed, "trajectory", 0);
        self.bootstrap.seed = derive_seed(seed, "bootstrap", 0);
        self.rater_seed = derive_seed(seed, "raters", 0);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub version: String,
    pub config: ExperimentConfig,
    pub band: PgtBand,
    pub curve: PgtCurve,
    pub peak: CurveSample,
    pub contained: bool,
}

/// Everything generated along the way, for inspection or export.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentArtifacts {
    pub truth: LabelGrid,
    pub raters: RaterSet,
    pub reference: LabelGrid,
}

pub const EXPERIMENT_ITEM: &str = "phantom";

pub fn rater_id(j: usize) -> String {
    format!("rater_{j:02}")
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, SimError> {
    run_experiment_with_artifacts(cfg).map(|(r, _)| r)
}

pub fn run_experiment_with_artifacts(
    cfg: &ExperimentConfig,
) -> Result<(ExperimentResult, ExperimentArtifacts), SimError> {
    if cfg.n_raters < 2 || cfg.n_repeats < 2 {
        return Err(spec_err("need at least 2 raters and 2 repeats"));
    }
    if !(cfg.tol >= 0.0) {
        return Err(spec_err(format!(
            "tol must be non-negative, got {}",
            cfg.tol
        )));
    }
    cfg.trajectory.validate()?;
    let truth = generate_phantom(&cfg.phantom)?;
    let annotations: Vec<Vec<LabelGrid>> = (0..cfg.n_raters)
        .into_par_iter()
        .map(|j| {
            let seed = derive_seed(cfg.rater_seed, "rater", j as u64);
            (0..cfg.n_repeats)
                .map(|k| simulate_rater(&truth, &cfg.noise, seed, k))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;
    let mut raters = RaterSet::new();
    for (j, reps) in annotations.iter().enumerate() {
        for (k, g) in reps.iter().enumerate() {
            raters.insert(EXPERIMENT_ITEM, &rater_id(j), k as u32, g.clone())?;
        }
    }
    raters.set_truth(EXPERIMENT_ITEM, truth.clone())?;
    let band = estimate_band(&raters, cfg.metric, &cfg.bootstrap)?;
    let firsts: Vec<LabelGrid> = annotations.iter().map(|r| r[0].clone()).collect();
    let reference = match cfg.reference {
        ReferenceMode::SingleRater => firsts[0].clone(),
        ReferenceMode::MajorityVote => majority_vote(&firsts)?,
        ReferenceMode::Staple => staple_fuse_labels(&firsts, &StapleParams::default())?.grid,
    };
    let curve = sweep_trajectory(&truth, &reference, &cfg.trajectory, cfg.metric)?;
    let peak = curve.peak();
    let contained = peak.sim_to_reference >= band.lower_edge() - cfg.tol
        && peak.sim_to_reference <= band.upper_edge() + cfg.tol;
    Ok((
        ExperimentResult {
            version: crate::VERSION.to_string(),
            config: cfg.clone(),
            band,
            curve,
            peak,
            contained,
        },
        ExperimentArtifacts {
            truth,
            raters,
            reference,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::voxel_agreement;

    fn small_phantom(seed: u64) -> PhantomSpec {
        PhantomSpec {
            dims: vec![48, 48],
            n_blobs: 3,
            blob_radius_range: (4.0, 9.0),
            smoothing: 1,
            seed,
        }
    }

    #[test]
    fn phantom_is_deterministic_and_in_range() {
        let a = generate_phantom(&small_phantom(4)).unwrap();
        assert_eq!(a, generate_phantom(&small_phantom(4)).unwrap());
        assert_ne!(a, generate_phantom(&small_phantom(5)).unwrap());
        let fg = a.foreground().count() as f64 / a.len() as f64;
        assert!((0.05..=0.6).contains(&fg));
        assert!(a.max_label() == 3);
    }

    #[test]
    fn phantom_rejects_bad_specs() {
        let bad = [
            PhantomSpec {
                dims: vec![10],
                ..small_phantom(0)
            },
            PhantomSpec {
                n_blobs: 0,
                ..small_phantom(0)
            },
            PhantomSpec {
                blob_radius_range: (5.0, 4.0),
                ..small_phantom(0)
            },
            PhantomSpec {
                blob_radius_range: (30.0, 30.0),
                ..small_phantom(0)
            },
        ];
        for spec in bad {
            assert!(matches!(generate_phantom(&spec), Err(SimError::Spec(_))));
        }
        // one tiny blob can never cover 5% of a large grid
        let sparse = PhantomSpec {
            dims: vec![100, 100],
            n_blobs: 1,
            blob_radius_range: (1.0, 1.0),
            smoothing: 0,
            seed: 0,
        };
        assert!(matches!(
            generate_phantom(&sparse),
            Err(SimError::PhantomInfeasible { .. })
        ));
    }

    #[test]
    fn three_d_phantom() {
        let spec = PhantomSpec {
            dims: vec![20, 20, 20],
            n_blobs: 2,
            blob_radius_range: (4.0, 6.0),
            smoothing: 1,
            seed: 9,
        };
        let g = generate_phantom(&spec).unwrap();
        assert_eq!(g.dims(), &[20, 20, 20]);
    }

    #[test]
    fn zero_noise_rater_is_identity() {
        let truth = generate_phantom(&small_phantom(1)).unwrap();
        for k in 0..3 {
            let r = simulate_rater(&truth, &RaterNoiseModel::default(), 77, k).unwrap();
            assert_eq!(r, truth);
        }
    }

    #[test]
    fn bias_shifts_and_jitter_changes_boundary() {
        let truth = LabelGrid::new(vec![1, 6], vec![0, 1, 1, 0, 0, 0]).unwrap();
        let noise = RaterNoiseModel {
            bias: vec![0, 2],
            ..Default::default()
        };
        let r = simulate_rater(&truth, &noise, 0, 0).unwrap();
        assert_eq!(r.voxels(), &[0, 0, 0, 1, 1, 0]);

        let mut v = vec![0, 1, 1, 0, 2, 0];
        let st = strides(&[1, 6]);
        dilate(&mut v, 1, &[1, 6], &st);
        assert_eq!(v, vec![1, 1, 1, 1, 2, 0]);
        erode(&mut v, 1, &[1, 6], &st);
        // voxel 0 sits on the grid edge and keeps its label
        assert_eq!(v, vec![1, 1, 1, 0, 2, 0]);
    }

    #[test]
    fn repeats_share_the_base() {
        let truth = generate_phantom(&small_phantom(2)).unwrap();
        let noise = RaterNoiseModel {
            flip_prob: 0.1,
            repeat_flip_prob: 0.0,
            ..Default::default()
        };
        let r0 = simulate_rater(&truth, &noise, 5, 0).unwrap();
        assert_eq!(r0, simulate_rater(&truth, &noise, 5, 1).unwrap());
        assert_ne!(r0, simulate_rater(&truth, &noise, 6, 0).unwrap());
    }

    #[test]
    fn flips_never_keep_the_label() {
        let mut v = vec![2u16; 1000];
        flip(&mut v, 0.999_999, 3, &mut stream(0, "t", 0));
        assert!(v.iter().all(|&x| x != 2 && x <= 3));
        assert!([0u16, 1, 3].iter().all(|l| v.contains(l)));
    }

    #[test]
    fn trajectory_endpoints() {
        let truth = generate_phantom(&small_phantom(3)).unwrap();
        let noise = RaterNoiseModel {
            flip_prob: 0.1,
            ..Default::default()
        };
        let reference = simulate_rater(&truth, &noise, 1, 0).unwrap();
        let traj = TrajectorySpec {
            seed: 4,
            ..Default::default()
        };
        let at_one = model_output(&truth, &reference, &traj, 1.0).unwrap();
        assert_eq!(at_one.voxels(), reference.voxels());
        let clean = model_output(&truth, &truth, &traj, traj.t_signal).unwrap();
        assert_eq!(clean.voxels(), truth.voxels());
        assert!(model_output(&truth, &truth, &traj, 1.5).is_err());
        assert_eq!(
            model_output(&truth, &reference, &traj, 0.3).unwrap(),
            model_output(&truth, &reference, &traj, 0.3).unwrap()
        );
    }

    #[test]
    fn curve_peaks_before_the_end_under_noise() {
        let truth = generate_phantom(&small_phantom(3)).unwrap();
        let noise = RaterNoiseModel {
            flip_prob: 0.05,
            ..Default::default()
        };
        let reference = simulate_rater(&truth, &noise, 1, 0).unwrap();
        let traj = TrajectorySpec::default();
        let curve = sweep_trajectory(&truth, &reference, &traj, MetricId::Dice).unwrap();
        assert_eq!(curve.samples.len(), 101);
        assert!(curve.peak().t < 1.0);
        let last = curve.samples.last().unwrap();
        let expected = voxel_agreement(&truth, &reference).unwrap().value.unwrap();
        let va = sweep_trajectory(&truth, &reference, &traj, MetricId::VoxelAgreement).unwrap();
        assert_eq!(va.samples.last().unwrap().sim_to_truth, expected);
        assert!(last.sim_to_reference == 1.0);

        let same = sweep_trajectory(&truth, &truth, &traj, MetricId::Dice).unwrap();
        assert!(same
            .samples
            .iter()
            .all(|s| s.sim_to_reference == s.sim_to_truth));
    }

    #[test]
    fn zero_noise_experiment_is_contained() {
        let mut cfg = ExperimentConfig::seeded(1);
        cfg.phantom = small_phantom(cfg.phantom.seed);
        cfg.noise = RaterNoiseModel::default();
        let r = run_experiment(&cfg).unwrap();
        assert_eq!((r.band.lower_edge(), r.band.upper_edge()), (1.0, 1.0));
        assert_eq!(r.peak.sim_to_reference, 1.0);
        assert_eq!(r.peak.t, cfg.trajectory.t_signal);
        assert!(r.contained);
    }

    #[test]
    fn experiment_is_deterministic() {
        let mut cfg = ExperimentConfig::seeded(8);
        cfg.phantom = small_phantom(cfg.phantom.seed);
        cfg.bootstrap.n_resamples = 200;
        let a = run_experiment(&cfg).unwrap();
        assert_eq!(a, run_experiment(&cfg).unwrap());
        cfg.reference = ReferenceMode::Staple;
        assert!(run_experiment(&cfg).is_ok());
        cfg.n_repeats = 1;
        assert!(matches!(run_experiment(&cfg), Err(SimError::Spec(_))));
    }
}
