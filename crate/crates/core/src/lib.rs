//! Annotation reliability and Peak Ground Truth analysis.
//!
//! The crate measures how well raters agree with each other (inter-rater) and
//! with themselves (intra-rater), turns those two numbers into a band of
//! similarity scores beyond which a model is likely fitting annotation noise,
//! fuses annotations into consensus references, and ships a simulator that
//! reproduces the effect against a hidden synthetic truth.
//!
//! Modules, bottom-up:
//!
//! - [`grid`]: label grids, masks, and the LGRID file format
//! - [`metrics`]: overlap, boundary-distance, agreement and instance metrics
//! - [`reliability`]: inter/intra-rater estimates with bootstrap intervals
//! - [`pgt`]: band construction, score verdicts, model reports
//! - [`consensus`]: majority vote and STAPLE-style EM fusion
//! - [`sim`]: phantoms, rater noise, training trajectories, experiments

pub mod consensus;
pub mod grid;
pub mod metrics;
pub mod pgt;
pub mod reliability;
pub mod rng;
pub mod sim;

pub use grid::{read_lgrid, write_lgrid, BinaryMask, InstanceMap, Label, LabelGrid};
pub use metrics::{MetricConfig, MetricId, MetricResult};
pub use pgt::{
    classify_score, estimate_band, evaluate_against_band, evaluate_models, PgtBand, PgtReport,
    Reference, Verdict, VerdictClass,
};
pub use reliability::{BootstrapSpec, RaterSet, ReliabilityEstimate};

/// Version string embedded in every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
