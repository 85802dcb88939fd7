//! Similarity and agreement metrics between annotations.
//!
//! Every metric is a pure function of its inputs. Pairwise metrics on label
//! grids are dispatched through [`MetricConfig::evaluate`], which is what the
//! reliability, band and simulation code call.

mod agreement;
mod compound;
mod instance;
mod overlap;
mod surface;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{BinaryMask, GridError, InstanceMap, Label, LabelGrid};

pub use agreement::{cohen_kappa, fleiss_kappa, krippendorff_alpha_nominal};
pub use compound::{compound_score, CompoundSpec};
pub use instance::{match_instances, panoptic_quality, Matching, PanopticQuality};
pub use overlap::{contingency, dice, jaccard, mean_label_dice, voxel_agreement, ContingencyTable};
pub use surface::{boundary, surface_distances, SurfaceDistances};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("sequence length mismatch: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("empty input")]
    Empty,
    #[error("item {item} has {got} ratings, expected {expected}")]
    RowSum {
        item: usize,
        got: u64,
        expected: u64,
    },
    #[error("fleiss kappa needs at least 2 raters per item, got {0}")]
    TooFewRaters(u64),
    #[error("iou threshold must lie in (0, 1], got {0}")]
    IouThreshold(f64),
    #[error("compound spec: {0}")]
    Compound(String),
    #[error("compound score is missing component `{0}`")]
    MissingComponent(MetricId),
    #[error("compound component `{0}` is undefined")]
    UndefinedComponent(MetricId),
    #[error("`{0}` is not a pairwise grid metric")]
    NotPairwise(MetricId),
}

/// Canonical metric names, as used on the command line and in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricId {
    Dice,
    Jaccard,
    VoxelAgreement,
    Hausdorff,
    Hd95,
    Assd,
    MeanLabelDice,
    CohenKappa,
    PanopticQuality,
    FleissKappa,
    KrippendorffAlpha,
}

impl MetricId {
    pub const ALL: [MetricId; 11] = [
        MetricId::Dice,
        MetricId::Jaccard,
        MetricId::VoxelAgreement,
        MetricId::Hausdorff,
        MetricId::Hd95,
        MetricId::Assd,
        MetricId::MeanLabelDice,
        MetricId::CohenKappa,
        MetricId::PanopticQuality,
        MetricId::FleissKappa,
        MetricId::KrippendorffAlpha,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricId::Dice => "dice",
            MetricId::Jaccard => "jaccard",
            MetricId::VoxelAgreement => "voxel_agreement",
            MetricId::Hausdorff => "hausdorff",
            MetricId::Hd95 => "hd95",
            MetricId::Assd => "assd",
            MetricId::MeanLabelDice => "mean_label_dice",
            MetricId::CohenKappa => "cohen_kappa",
            MetricId::PanopticQuality => "panoptic_quality",
            MetricId::FleissKappa => "fleiss_kappa",
            MetricId::KrippendorffAlpha => "krippendorff_alpha",
        }
    }

    /// `false` for boundary distances, where smaller is better.
    pub fn higher_is_better(self) -> bool {
        !self.is_distance()
    }

    pub fn is_distance(self) -> bool {
        matches!(self, MetricId::Hausdorff | MetricId::Hd95 | MetricId::Assd)
    }

    /// Chance-corrected agreement statistics, valued in [-1, 1].
    pub fn is_chance_corrected(self) -> bool {
        matches!(
            self,
            MetricId::CohenKappa | MetricId::FleissKappa | MetricId::KrippendorffAlpha
        )
    }

    /// Whether [`MetricConfig::evaluate`] accepts this metric.
    pub fn is_pairwise(self) -> bool {
        !matches!(self, MetricId::FleissKappa | MetricId::KrippendorffAlpha)
    }

    /// Maps a value onto a higher-is-better scale: identity for similarities,
    /// `1 / (1 + d)` for distances.
    pub fn to_similarity(self, value: f64) -> f64 {
        if self.is_distance() {
            1.0 / (1.0 + value)
        } else {
            value
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown metric `{0}`")]
pub struct UnknownMetric(pub String);

impl FromStr for MetricId {
    type Err = UnknownMetric;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetricId::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| UnknownMetric(s.to_string()))
    }
}

/// Outcome of one metric evaluation. Degenerate inputs yield `value: None`
/// together with a reason.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricResult {
    pub metric: MetricId,
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<&'static str>,
}

impl MetricResult {
    pub fn defined(metric: MetricId, value: f64) -> Self {
        Self {
            metric,
            value: Some(value),
            reason: None,
        }
    }

    pub fn undefined(metric: MetricId, reason: &'static str) -> Self {
        Self {
            metric,
            value: None,
            reason: Some(reason),
        }
    }

    pub fn is_defined(&self) -> bool {
        self.value.is_some()
    }
}

/// A metric plus the knobs needed to apply it to a pair of label grids.
/// Deserializes from either a bare metric name or a table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "MetricConfigRepr")]
pub struct MetricConfig {
    pub metric: MetricId,
    /// Foreground label for binary metrics; `None` means "any nonzero label".
    pub label: Option<Label>,
    pub iou_threshold: f64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MetricConfigRepr {
    Name(MetricId),
    Full(MetricConfigTable),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MetricConfigTable {
    metric: MetricId,
    #[serde(default)]
    label: Option<Label>,
    #[serde(default = "default_iou")]
    iou_threshold: f64,
}

impl From<MetricConfigRepr> for MetricConfig {
    fn from(r: MetricConfigRepr) -> Self {
        match r {
            MetricConfigRepr::Name(m) => m.into(),
            MetricConfigRepr::Full(t) => Self {
                metric: t.metric,
                label: t.label,
                iou_threshold: t.iou_threshold,
            },
        }
    }
}

fn default_iou() -> f64 {
    DEFAULT_IOU_THRESHOLD
}

impl From<MetricId> for MetricConfig {
    fn from(metric: MetricId) -> Self {
        Self {
            metric,
            label: None,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
        }
    }
}

impl MetricConfig {
    pub fn with_label(mut self, label: Option<Label>) -> Self {
        self.label = label;
        self
    }

    fn mask(&self, g: &LabelGrid) -> BinaryMask {
        match self.label {
            Some(l) => g.mask_of(l),
            None => g.foreground(),
        }
    }

    /// Evaluates the configured metric on two grids of equal dims.
    pub fn evaluate(&self, a: &LabelGrid, b: &LabelGrid) -> Result<MetricResult, MetricError> {
        a.same_geometry(b)?;
        Ok(match self.metric {
            MetricId::Dice => dice(&self.mask(a), &self.mask(b))?,
            MetricId::Jaccard => jaccard(&self.mask(a), &self.mask(b))?,
            MetricId::Hausdorff | MetricId::Hd95 | MetricId::Assd => {
                let d = surface_distances(&self.mask(a), &self.mask(b))?;
                match self.metric {
                    MetricId::Hausdorff => d.hausdorff,
                    MetricId::Hd95 => d.hd95,
                    _ => d.assd,
                }
            }
            MetricId::VoxelAgreement => voxel_agreement(a, b)?,
            MetricId::MeanLabelDice => mean_label_dice(a, b)?,
            MetricId::CohenKappa => cohen_kappa(a.voxels(), b.voxels())?,
            MetricId::PanopticQuality => {
                let (ia, ib) = (InstanceMap::new(a.clone()), InstanceMap::new(b.clone()));
                let m = match_instances(&ia, &ib, self.iou_threshold)?;
                panoptic_quality(&m, &ia, &ib).pq
            }
            other => return Err(MetricError::NotPairwise(other)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip_and_orientation() {
        for m in MetricId::ALL {
            assert_eq!(m.name().parse::<MetricId>().unwrap(), m);
            assert_eq!(
                serde_json::to_string(&m).unwrap(),
                format!("\"{}\"", m.name())
            );
        }
        assert!(!MetricId::Hausdorff.higher_is_better());
        assert!(!MetricId::Hd95.higher_is_better());
        assert!(!MetricId::Assd.higher_is_better());
        assert!(MetricId::Dice.higher_is_better());
        assert!("dicey".parse::<MetricId>().is_err());
    }

    #[test]
    fn distance_normalisation() {
        assert_eq!(MetricId::Hausdorff.to_similarity(0.0), 1.0);
        assert_eq!(MetricId::Assd.to_similarity(1.0), 0.5);
        assert_eq!(MetricId::Dice.to_similarity(0.25), 0.25);
    }

    #[test]
    fn evaluate_dispatches_with_label_selection() {
        let a = LabelGrid::new(vec![1, 4], vec![1, 1, 2, 0]).unwrap();
        let b = LabelGrid::new(vec![1, 4], vec![1, 2, 2, 0]).unwrap();
        let any = MetricConfig::from(MetricId::Dice).evaluate(&a, &b).unwrap();
        assert_eq!(any.value, Some(1.0));
        let one = MetricConfig::from(MetricId::Dice)
            .with_label(Some(1))
            .evaluate(&a, &b)
            .unwrap();
        assert!((one.value.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let va = MetricConfig::from(MetricId::VoxelAgreement)
            .evaluate(&a, &b)
            .unwrap();
        assert_eq!(va.value, Some(0.75));
        assert!(matches!(
            MetricConfig::from(MetricId::FleissKappa).evaluate(&a, &b),
            Err(MetricError::NotPairwise(_))
        ));
        let c = LabelGrid::new(vec![2, 2], vec![0; 4]).unwrap();
        assert!(matches!(
            MetricConfig::from(MetricId::Dice).evaluate(&a, &c),
            Err(MetricError::Grid(GridError::DimMismatch { .. }))
        ));
    }
}
