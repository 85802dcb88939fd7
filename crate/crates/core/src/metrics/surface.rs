//! Boundary-distance metrics (Hausdorff, HD95, ASSD).
//!
//! Boundary voxels are foreground voxels with at least one face-adjacent
//! background voxel or a face on the grid edge. Distances are Euclidean in
//! physical units. The nearest-boundary lookups go through an exact separable
//! squared distance transform so the cost is linear in the voxel count.

use serde::Serialize;

use super::{MetricError, MetricId, MetricResult};
use crate::grid::{strides, BinaryMask};

const EMPTY_SURFACE: &str = "undefined for empty surface";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurfaceDistances {
    pub hausdorff: MetricResult,
    pub hd95: MetricResult,
    pub assd: MetricResult,
}

/// Flat indices of the boundary voxels of `mask`, ascending.
pub fn boundary(mask: &BinaryMask) -> Vec<usize> {
    let dims = mask.dims();
    let st = strides(dims);
    let bits = mask.bits();
    let mut out = Vec::new();
    'voxels: for (i, &on) in bits.iter().enumerate() {
        if !on {
            continue;
        }
        for axis in 0..dims.len() {
            let c = (i / st[axis]) % dims[axis];
            if c == 0 || c + 1 == dims[axis] || !bits[i - st[axis]] || !bits[i + st[axis]] {
                out.push(i);
                continue 'voxels;
            }
        }
    }
    out
}

/// Lower envelope of parabolas along one line. `f` holds squared distances
/// (`INFINITY` where no site is reachable), `w` is the physical step.
fn edt_line(f: &[f64], w: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    let n = f.len();
    v.clear();
    z.clear();
    let pos = |q: usize| w * q as f64;
    for q in 0..n {
        if f[q].is_infinite() {
            continue;
        }
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let s = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p)))
                        / (2.0 * (pos(q) - pos(p)));
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let x = pos(q);
        while k + 1 < v.len() && z[k + 1] < x {
            k += 1;
        }
        let d = w * (q as f64 - v[k] as f64);
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance from every voxel to the nearest site.
fn squared_distance_to(sites: &[usize], dims: &[usize], spacing: &[f64]) -> Vec<f64> {
    let n: usize = dims.iter().product();
    let mut field = vec![f64::INFINITY; n];
    for &s in sites {
        field[s] = 0.0;
    }
    let st = strides(dims);
    let (mut v, mut z) = (Vec::new(), Vec::new());
    for axis in 0..dims.len() {
        let len = dims[axis];
        let step = st[axis];
        let mut line = vec![0.0; len];
        let mut out = vec![0.0; len];
        for start in 0..n {
            // visit each line once, from the voxel whose coordinate on `axis` is 0
            if !(start / step).is_multiple_of(len) {
                continue;
            }
            for (k, l) in line.iter_mut().enumerate() {
                *l = field[start + k * step];
            }
            edt_line(&line, spacing[axis], &mut out, &mut v, &mut z);
            for (k, o) in out.iter().enumerate() {
                field[start + k * step] = *o;
            }
        }
    }
    field
}

/// Hausdorff, HD95 (nearest-rank 95th percentile) and ASSD over the pooled
/// symmetric boundary-to-boundary distances.
pub fn surface_distances(a: &BinaryMask, b: &BinaryMask) -> Result<SurfaceDistances, MetricError> {
    a.same_geometry(b)?;
    let (ba, bb) = (boundary(a), boundary(b));
    if ba.is_empty() || bb.is_empty() {
        return Ok(SurfaceDistances {
            hausdorff: MetricResult::undefined(MetricId::Hausdorff, EMPTY_SURFACE),
            hd95: MetricResult::undefined(MetricId::Hd95, EMPTY_SURFACE),
            assd: MetricResult::undefined(MetricId::Assd, EMPTY_SURFACE),
        });
    }
    let to_b = squared_distance_to(&bb, a.dims(), a.spacing());
    let to_a = squared_distance_to(&ba, a.dims(), a.spacing());
    let mut pool: Vec<f64> = ba
        .iter()
        .map(|&i| to_b[i].sqrt())
        .chain(bb.iter().map(|&i| to_a[i].sqrt()))
        .collect();
    let mean = pool.iter().sum::<f64>() / pool.len() as f64;
    pool.sort_by(f64::total_cmp);
    let rank = (95 * pool.len()).div_ceil(100).max(1);
    Ok(SurfaceDistances {
        hausdorff: MetricResult::defined(MetricId::Hausdorff, *pool.last().unwrap()),
        hd95: MetricResult::defined(MetricId::Hd95, pool[rank - 1]),
        assd: MetricResult::defined(MetricId::Assd, mean),
    })
}
