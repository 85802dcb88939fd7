//! Instance-level matching and panoptic quality.
//!
//! Matching maximises total IoU over one-to-one pairings restricted to pairs
//! with IoU at or above the threshold. Among optimal matchings the one whose
//! sorted pair list is lexicographically smallest wins. Candidate pairs form
//! a bipartite graph that is split into connected components, each solved
//! with the Hungarian algorithm.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{contingency, MetricError, MetricId, MetricResult};
use crate::grid::{InstanceMap, Label};

/// Relative tolerance under which two total IoU values count as tied.
pub(crate) const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Matching {
    /// `(a_id, b_id, iou)`, sorted by `a_id`.
    pub pairs: Vec<(Label, Label, f64)>,
    pub unmatched_a: Vec<Label>,
    pub unmatched_b: Vec<Label>,
    pub iou_threshold: f64,
}

impl Matching {
    /// Sum of pair IoUs in pair order.
    pub fn total_iou(&self) -> f64 {
        self.pairs.iter().map(|p| p.2).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PanopticQuality {
    pub pq: MetricResult,
    pub sq: MetricResult,
    pub rq: MetricResult,
}

/// Maximum-weight assignment on a dense `rows × cols` matrix (`rows <= cols`),
/// returning the column picked for each row and the attained total.
fn hungarian_max(weights: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let n = weights.len();
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let m = weights[0].len();
    debug_assert!(n <= m);
    // minimise cost = -weight; 1-based potentials as in the classic O(n²m) form
    let cost = |i: usize, j: usize| -weights[i - 1][j - 1];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    let total = assign.iter().enumerate().map(|(i, &j)| weights[i][j]).sum();
    (assign, total)
}

/// Best total IoU over the candidate edges, with rows in `barred_rows` left out
/// and the pairs in `forced` taken.
fn optimum(
    rows: &[Label],
    cols: &[Label],
    edges: &BTreeMap<(Label, Label), f64>,
    barred_rows: &BTreeSet<Label>,
    forced: &[(Label, Label)],
) -> f64 {
    let used_rows: BTreeSet<Label> = forced.iter().map(|p| p.0).collect();
    let used_cols: BTreeSet<Label> = forced.iter().map(|p| p.1).collect();
    let free_rows: Vec<Label> = rows
        .iter()
        .copied()
        .filter(|r| !used_rows.contains(r) && !barred_rows.contains(r))
        .collect();
    let free_cols: Vec<Label> = cols
        .iter()
        .copied()
        .filter(|c| !used_cols.contains(c))
        .collect();
    let base: f64 = forced.iter().map(|p| edges[p]).sum();
    if free_rows.is_empty() || free_cols.is_empty() {
        return base;
    }
    let w = |r: Label, c: Label| edges.get(&(r, c)).copied().unwrap_or(0.0);
    let (n_r, n_c) = (free_rows.len(), free_cols.len());
    let matrix: Vec<Vec<f64>> = if n_r <= n_c {
        free_rows
            .iter()
            .map(|&r| free_cols.iter().map(|&c| w(r, c)).collect())
            .collect()
    } else {
        free_cols
            .iter()
            .map(|&c| free_rows.iter().map(|&r| w(r, c)).collect())
            .collect()
    };
    base + hungarian_max(&matrix).1
}

fn tied(x: f64, best: f64) -> bool {
    (x - best).abs() <= TIE_TOLERANCE * best.abs().max(1.0)
}

/// Lexicographically smallest optimal matching within one component.
fn solve_component(
    rows: &[Label],
    cols: &[Label],
    edges: &BTreeMap<(Label, Label), f64>,
) -> Vec<(Label, Label)> {
    let best = optimum(rows, cols, edges, &BTreeSet::new(), &[]);
    let mut forced: Vec<(Label, Label)> = Vec::new();
    let mut barred: BTreeSet<Label> = BTreeSet::new();
    for &r in rows {
        let taken: BTreeSet<Label> = forced.iter().map(|p| p.1).collect();
        let choice = edges
            .range((r, Label::MIN)..=(r, Label::MAX))
            .map(|(&(_, c), _)| c)
            .filter(|c| !taken.contains(c))
            .find(|&c| {
                let mut trial = forced.clone();
                trial.push((r, c));
                tied(optimum(rows, cols, edges, &barred, &trial), best)
            });
        match choice {
            Some(c) => forced.push((r, c)),
            None => {
                barred.insert(r);
            }
        }
    }
    forced
}

/// One-to-one matching of instances maximising total IoU among pairs whose
/// IoU reaches `iou_threshold`.
pub fn match_instances(
    a: &InstanceMap,
    b: &InstanceMap,
    iou_threshold: f64,
) -> Result<Matching, MetricError> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(MetricError::IouThreshold(iou_threshold));
    }
    let table = contingency(a.grid(), b.grid())?;
    let size_a = table.row_totals();
    let size_b = table.col_totals();
    let mut edges: BTreeMap<(Label, Label), f64> = BTreeMap::new();
    for ((x, y), inter) in table.cells() {
        if x == 0 || y == 0 {
            continue;
        }
        let union = size_a[&x] + size_b[&y] - inter;
        let iou = inter as f64 / union as f64;
        if iou >= iou_threshold {
            edges.insert((x, y), iou);
        }
    }

    // connected components over the candidate edges
    let mut parent: BTreeMap<(bool, Label), (bool, Label)> = BTreeMap::new();
    fn find(
        parent: &mut BTreeMap<(bool, Label), (bool, Label)>,
        x: (bool, Label),
    ) -> (bool, Label) {
        let p = *parent.entry(x).or_insert(x);
        if p == x {
            return x;
        }
        let root = find(parent, p);
        parent.insert(x, root);
        root
    }
    for &(x, y) in edges.keys() {
        let (ra, rb) = (find(&mut parent, (false, x)), find(&mut parent, (true, y)));
        if ra != rb {
            parent.insert(ra.max(rb), ra.min(rb));
        }
    }
    let mut components: BTreeMap<(bool, Label), (Vec<Label>, Vec<Label>)> = BTreeMap::new();
    let nodes: Vec<(bool, Label)> = parent.keys().copied().collect();
    for node in nodes {
        let root = find(&mut parent, node);
        let entry = components.entry(root).or_default();
        if node.0 {
            entry.1.push(node.1);
        } else {
            entry.0.push(node.1);
        }
    }

    let mut chosen: Vec<(Label, Label)> = Vec::new();
    for (rows, cols) in components.values() {
        let sub: BTreeMap<(Label, Label), f64> = edges
            .iter()
            .filter(|((x, _), _)| rows.binary_search(x).is_ok())
            .map(|(&k, &v)| (k, v))
            .collect();
        chosen.extend(solve_component(rows, cols, &sub));
    }
    chosen.sort_unstable();

    let matched_a: BTreeSet<Label> = chosen.iter().map(|p| p.0).collect();
    let matched_b: BTreeSet<Label> = chosen.iter().map(|p| p.1).collect();
    Ok(Matching {
        pairs: chosen
            .iter()
            .map(|&(x, y)| (x, y, edges[&(x, y)]))
            .collect(),
        unmatched_a: a
            .instance_ids()
            .into_iter()
            .filter(|x| !matched_a.contains(x))
            .collect(),
        unmatched_b: b
            .instance_ids()
            .into_iter()
            .filter(|y| !matched_b.contains(y))
            .collect(),
        iou_threshold,
    })
}

/// PQ = SQ · RQ with TP = matched pairs, FP = unmatched predictions (`b`),
/// FN = unmatched references (`a`).
pub fn panoptic_quality(m: &Matching, _a: &InstanceMap, _b: &InstanceMap) -> PanopticQuality {
    let tp = m.pairs.len() as f64;
    let fp = m.unmatched_b.len() as f64;
    let fn_ = m.unmatched_a.len() as f64;
    if tp + fp + fn_ == 0.0 {
        const NONE: &str = "no instances in either map";
        return PanopticQuality {
            pq: MetricResult::undefined(MetricId::PanopticQuality, NONE),
            sq: MetricResult::undefined(MetricId::PanopticQuality, NONE),
            rq: MetricResult::undefined(MetricId::PanopticQuality, NONE),
        };
    }
    let rq = tp / (tp + 0.5 * fp + 0.5 * fn_);
    if m.pairs.is_empty() {
        return PanopticQuality {
            pq: MetricResult::defined(MetricId::PanopticQuality, 0.0),
            sq: MetricResult::undefined(MetricId::PanopticQuality, "no matched instances"),
            rq: MetricResult::defined(MetricId::PanopticQuality, rq),
        };
    }
    let sq = m.total_iou() / tp;
    PanopticQuality {
        pq: MetricResult::defined(MetricId::PanopticQuality, sq * rq),
        sq: MetricResult::defined(MetricId::PanopticQuality, sq),
        rq: MetricResult::defined(MetricId::PanopticQuality, rq),
    }
}
