//! Dense 2D/3D label grids and the LGRID v1 on-disk format.
//!
//! A grid stores one unsigned 16-bit label per voxel in row-major order
//! (last axis fastest). Label 0 is background. Physical voxel spacing travels
//! with the grid so that boundary-distance metrics never mix units.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Label = u16;

/// Errors raised when constructing grids or deriving masks from them.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("grids must have 2 or 3 axes, got {0}")]
    DimCount(usize),
    #[error("axis {axis} has zero extent")]
    ZeroExtent { axis: usize },
    #[error("voxel count {got} does not match product of dims {expected}")]
    VoxelCount { expected: usize, got: usize },
    #[error("spacing must have one strictly positive finite value per axis")]
    Spacing,
    #[error("voxel {index} holds label {label} above declared max_label {max_label}")]
    LabelAboveMax {
        index: usize,
        label: Label,
        max_label: Label,
    },
    #[error("label {label} absent from grid's declared range (max_label {max_label})")]
    LabelOutOfRange { label: Label, max_label: Label },
    #[error("dimension mismatch: {a:?} vs {b:?}")]
    DimMismatch { a: Vec<usize>, b: Vec<usize> },
}

/// Errors raised by [`read_lgrid`]. Each variant names the offending field.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("bad magic: expected `LGRID`")]
    BadMagic,
    #[error("unsupported format version `{0}`")]
    BadVersion(String),
    #[error("dim count must be 2 or 3, got `{0}`")]
    BadDimCount(String),
    #[error("malformed header field `{field}`: `{value}`")]
    BadField { field: &'static str, value: String },
    #[error("header line is missing or not terminated by a newline")]
    UnterminatedHeader,
    #[error("malformed SPACING line: {0}")]
    BadSpacing(String),
    #[error("expected `DATA` line")]
    MissingData,
    #[error("payload length mismatch: expected {expected} bytes, got {got}")]
    PayloadLength { expected: usize, got: usize },
    #[error("label {label} at voxel {index} exceeds declared max_label {max_label}")]
    LabelExceedsMax {
        index: usize,
        label: Label,
        max_label: Label,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
}

fn check_dims(dims: &[usize]) -> Result<usize, GridError> {
    if !(2..=3).contains(&dims.len()) {
        return Err(GridError::DimCount(dims.len()));
    }
    if let Some(axis) = dims.iter().position(|&d| d == 0) {
        return Err(GridError::ZeroExtent { axis });
    }
    Ok(dims.iter().product())
}

fn check_spacing(dims: &[usize], spacing: &[f64]) -> Result<(), GridError> {
    if spacing.len() != dims.len() || spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(GridError::Spacing);
    }
    Ok(())
}

/// Dense label field with per-axis physical spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelGrid {
    dims: Vec<usize>,
    spacing: Vec<f64>,
    max_label: Label,
    voxels: Vec<Label>,
}

impl LabelGrid {
    /// Builds a grid with unit spacing whose declared `max_label` is the
    /// largest label present.
    pub fn new(dims: Vec<usize>, voxels: Vec<Label>) -> Result<Self, GridError> {
        let max_label = voxels.iter().copied().max().unwrap_or(0);
        Self::with_max_label(dims, voxels, max_label)
    }

    pub fn with_max_label(
        dims: Vec<usize>,
        voxels: Vec<Label>,
        max_label: Label,
    ) -> Result<Self, GridError> {
        let n = check_dims(&dims)?;
        if voxels.len() != n {
            return Err(GridError::VoxelCount {
                expected: n,
                got: voxels.len(),
            });
        }
        if let Some(index) = voxels.iter().position(|&v| v > max_label) {
            return Err(GridError::LabelAboveMax {
                index,
                label: voxels[index],
                max_label,
            });
        }
        let spacing = vec![1.0; dims.len()];
        Ok(Self {
            dims,
            spacing,
            max_label,
            voxels,
        })
    }

    /// An all-background grid.
    pub fn zeros(dims: Vec<usize>) -> Result<Self, GridError> {
        let n = check_dims(&dims)?;
        Self::new(dims, vec![0; n])
    }

    pub fn with_spacing(mut self, spacing: Vec<f64>) -> Result<Self, GridError> {
        check_spacing(&self.dims, &spacing)?;
        self.spacing = spacing;
        Ok(self)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn max_label(&self) -> Label {
        self.max_label
    }

    pub fn voxels(&self) -> &[Label] {
        &self.voxels
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    /// Replaces the voxel data, keeping geometry. `max_label` grows to cover
    /// the new labels if needed.
    pub fn map_voxels(&self, voxels: Vec<Label>) -> Result<Self, GridError> {
        let max_label = voxels
            .iter()
            .copied()
            .max()
            .unwrap_or(0)
            .max(self.max_label);
        let mut g = Self::with_max_label(self.dims.clone(), voxels, max_label)?;
        g.spacing = self.spacing.clone();
        Ok(g)
    }

    pub fn same_geometry(&self, other: &LabelGrid) -> Result<(), GridError> {
        if self.dims != other.dims {
            return Err(GridError::DimMismatch {
                a: self.dims.clone(),
                b: other.dims.clone(),
            });
        }
        Ok(())
    }

    /// Sorted distinct labels present in the grid.
    pub fn labels_present(&self) -> Vec<Label> {
        let mut seen = vec![false; self.max_label as usize + 1];
        for &v in &self.voxels {
            seen[v as usize] = true;
        }
        seen.iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .map(|(l, _)| l as Label)
            .collect()
    }

    /// Mask of voxels equal to `label`.
    pub fn binarize(&self, label: Label) -> Result<BinaryMask, GridError> {
        if label > self.max_label {
            return Err(GridError::LabelOutOfRange {
                label,
                max_label: self.max_label,
            });
        }
        Ok(self.mask_where(|v| v == label))
    }

    /// Mask of voxels equal to `label`, without the declared-range check.
    pub fn mask_of(&self, label: Label) -> BinaryMask {
        self.mask_where(|v| v == label)
    }

    /// Mask of all nonzero voxels.
    pub fn foreground(&self) -> BinaryMask {
        self.mask_where(|v| v != 0)
    }

    fn mask_where(&self, pred: impl Fn(Label) -> bool) -> BinaryMask {
        BinaryMask {
            dims: self.dims.clone(),
            spacing: self.spacing.clone(),
            bits: self.voxels.iter().map(|&v| pred(v)).collect(),
        }
    }
}

/// Foreground indicator field derived from a [`LabelGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    dims: Vec<usize>,
    spacing: Vec<f64>,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(dims: Vec<usize>, bits: Vec<bool>) -> Result<Self, GridError> {
        let n = check_dims(&dims)?;
        if bits.len() != n {
            return Err(GridError::VoxelCount {
                expected: n,
                got: bits.len(),
            });
        }
        let spacing = vec![1.0; dims.len()];
        Ok(Self {
            dims,
            spacing,
            bits,
        })
    }

    pub fn with_spacing(mut self, spacing: Vec<f64>) -> Result<Self, GridError> {
        check_spacing(&self.dims, &spacing)?;
        self.spacing = spacing;
        Ok(self)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn same_geometry(&self, other: &BinaryMask) -> Result<(), GridError> {
        if self.dims != other.dims {
            return Err(GridError::DimMismatch {
                a: self.dims.clone(),
                b: other.dims.clone(),
            });
        }
        Ok(())
    }

    /// 0/1 label grid with the same geometry.
    pub fn to_grid(&self) -> LabelGrid {
        let voxels = self.bits.iter().map(|&b| b as Label).collect();
        let mut g = LabelGrid::with_max_label(self.dims.clone(), voxels, 1)
            .expect("mask geometry is valid");
        g.spacing = self.spacing.clone();
        g
    }
}

/// A label grid whose nonzero labels are distinct object instances.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMap(LabelGrid);

impl InstanceMap {
    pub fn new(grid: LabelGrid) -> Self {
        Self(grid)
    }

    pub fn grid(&self) -> &LabelGrid {
        &self.0
    }

    /// Ids of instances that own at least one voxel, ascending.
    pub fn instance_ids(&self) -> Vec<Label> {
        self.0
            .labels_present()
            .into_iter()
            .filter(|&l| l != 0)
            .collect()
    }
}

impl From<LabelGrid> for InstanceMap {
    fn from(grid: LabelGrid) -> Self {
        Self(grid)
    }
}

/// Converts a flat row-major index into per-axis coordinates.
pub fn unravel(mut index: usize, dims: &[usize]) -> [usize; 3] {
    let mut out = [0usize; 3];
    for axis in (0..dims.len()).rev() {
        out[axis] = index % dims[axis];
        index /= dims[axis];
    }
    out
}

/// Row-major strides (last axis fastest).
pub fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; dims.len()];
    for axis in (0..dims.len().saturating_sub(1)).rev() {
        s[axis] = s[axis + 1] * dims[axis + 1];
    }
    s
}

const MAGIC: &str = "LGRID";

/// Serializes a grid as LGRID v1. The `SPACING` line is written only when some
/// axis has non-unit spacing.
pub fn write_lgrid(grid: &LabelGrid) -> Vec<u8> {
    let mut header = format!("{MAGIC} 1 {}", grid.dims.len());
    for d in &grid.dims {
        let _ = write!(header, " {d}");
    }
    let _ = writeln!(header, " {}", grid.max_label);
    if grid.spacing.iter().any(|&s| s != 1.0) {
        header.push_str("SPACING");
        for s in &grid.spacing {
            // `Display` for f64 is the shortest round-tripping decimal, never exponential.
            let _ = write!(header, " {s}");
        }
        header.push('\n');
    }
    header.push_str("DATA\n");
    let mut out = header.into_bytes();
    out.reserve(grid.voxels.len() * 2);
    for v in &grid.voxels {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn take_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a str> {
    let rest = &bytes[*pos..];
    let end = rest.iter().position(|&b| b == b'\n')?;
    let line = std::str::from_utf8(&rest[..end]).ok()?;
    *pos += end + 1;
    Some(line)
}

fn parse_field<T: std::str::FromStr>(field: &'static str, value: &str) -> Result<T, ParseError> {
    value.parse().map_err(|_| ParseError::BadField {
        field,
        value: value.to_string(),
    })
}

/// Parses an LGRID v1 byte stream.
pub fn read_lgrid(bytes: &[u8]) -> Result<LabelGrid, ParseError> {
    if !bytes.starts_with(MAGIC.as_bytes()) {
        return Err(ParseError::BadMagic);
    }
    let mut pos = 0;
    let header = take_line(bytes, &mut pos).ok_or(ParseError::UnterminatedHeader)?;
    let fields: Vec<&str> = header.split(' ').collect();
    if fields[0] != MAGIC {
        return Err(ParseError::BadMagic);
    }
    let version = fields.get(1).copied().unwrap_or("");
    if version != "1" {
        return Err(ParseError::BadVersion(version.to_string()));
    }
    let ndim_raw = fields.get(2).copied().unwrap_or("");
    let ndim: usize = match ndim_raw.parse() {
        Ok(n @ 2..=3) => n,
        _ => return Err(ParseError::BadDimCount(ndim_raw.to_string())),
    };
    if fields.len() != 3 + ndim + 1 {
        return Err(ParseError::BadField {
            field: "header",
            value: header.to_string(),
        });
    }
    let dims = fields[3..3 + ndim]
        .iter()
        .map(|f| parse_field::<usize>("dim", f))
        .collect::<Result<Vec<_>, _>>()?;
    let max_label: Label = parse_field("max_label", fields[3 + ndim])?;
    let n = check_dims(&dims)?;

    let mut line = take_line(bytes, &mut pos).ok_or(ParseError::MissingData)?;
    let mut spacing = vec![1.0; ndim];
    if let Some(rest) = line.strip_prefix("SPACING ") {
        let vals: Vec<&str> = rest.split(' ').collect();
        if vals.len() != ndim {
            return Err(ParseError::BadSpacing(format!(
                "expected {ndim} values, got {}",
                vals.len()
            )));
        }
        spacing = vals
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|s| s.is_finite() && *s > 0.0)
                    .ok_or_else(|| ParseError::BadSpacing(format!("invalid value `{v}`")))
            })
            .collect::<Result<_, _>>()?;
        line = take_line(bytes, &mut pos).ok_or(ParseError::MissingData)?;
    }
    if line != "DATA" {
        return Err(ParseError::MissingData);
    }
    let payload = &bytes[pos..];
    if payload.len() != n * 2 {
        return Err(ParseError::PayloadLength {
            expected: n * 2,
            got: payload.len(),
        });
    }
    let voxels: Vec<Label> = payload
        .chunks_exact(2)
        .map(|c| Label::from_le_bytes([c[0], c[1]]))
        .collect();
    if let Some(index) = voxels.iter().position(|&v| v > max_label) {
        return Err(ParseError::LabelExceedsMax {
            index,
            label: voxels[index],
            max_label,
        });
    }
    Ok(LabelGrid::with_max_label(dims, voxels, max_label)?.with_spacing(spacing)?)
}
