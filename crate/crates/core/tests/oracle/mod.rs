//! Brute-force reference implementations used to cross-check the library.
//! Each works from raw vectors by direct enumeration and shares no code with
//! the crate under test.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

fn set_of(bits: &[bool]) -> BTreeSet<usize> {
    bits.iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| i)
        .collect()
}

pub fn dice(a: &[bool], b: &[bool]) -> f64 {
    let (sa, sb) = (set_of(a), set_of(b));
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    let inter = sa.intersection(&sb).count() as f64;
    2.0 * inter / (sa.len() + sb.len()) as f64
}

pub fn jaccard(a: &[bool], b: &[bool]) -> f64 {
    let (sa, sb) = (set_of(a), set_of(b));
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

pub fn voxel_agreement(a: &[u16], b: &[u16]) -> f64 {
    let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
    same as f64 / a.len() as f64
}

/// Mean over foreground labels present in either grid; `None` when there are
/// none.
pub fn mean_label_dice(a: &[u16], b: &[u16]) -> Option<f64> {
    let labels: BTreeSet<u16> = a.iter().chain(b).copied().filter(|&l| l != 0).collect();
    if labels.is_empty() {
        return None;
    }
    let total: f64 = labels
        .iter()
        .map(|&l| {
            let ma: Vec<bool> = a.iter().map(|&v| v == l).collect();
            let mb: Vec<bool> = b.iter().map(|&v| v == l).collect();
            dice(&ma, &mb)
        })
        .sum();
    Some(total / labels.len() as f64)
}

/// Textbook `(p_o − p_e) / (1 − p_e)`; `None` when `p_e = 1` with
/// disagreement.
pub fn cohen_kappa(a: &[u16], b: &[u16]) -> Option<f64> {
    let n = a.len() as f64;
    let p_o = voxel_agreement(a, b);
    let cats: BTreeSet<u16> = a.iter().chain(b).copied().collect();
    let p_e: f64 = cats
        .iter()
        .map(|c| {
            let fa = a.iter().filter(|&&x| x == *c).count() as f64 / n;
            let fb = b.iter().filter(|&&x| x == *c).count() as f64 / n;
            fa * fb
        })
        .sum();
    if p_e == 1.0 {
        return if p_o == 1.0 { Some(1.0) } else { None };
    }
    Some((p_o - p_e) / (1.0 - p_e))
}

/// Fleiss' kappa by enumerating ordered rater pairs per item.
/// `ratings[item][rater]` is a category index.
pub fn fleiss_kappa(ratings: &[Vec<usize>]) -> Option<f64> {
    let n = ratings[0].len();
    let mut p_bar = 0.0;
    let mut cat_count: BTreeMap<usize, usize> = BTreeMap::new();
    for row in ratings {
        let mut agree = 0;
        for i in 0..n {
            for j in 0..n {
                if i != j && row[i] == row[j] {
                    agree += 1;
                }
            }
            *cat_count.entry(row[i]).or_insert(0) += 1;
        }
        p_bar += agree as f64 / (n * (n - 1)) as f64;
    }
    p_bar /= ratings.len() as f64;
    let total = (ratings.len() * n) as f64;
    let p_e: f64 = cat_count
        .values()
        .map(|&c| (c as f64 / total).powi(2))
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return None;
    }
    Some((p_bar - p_e) / (1.0 - p_e))
}

/// Nominal alpha by enumerating ordered pairs of ratings within each unit.
pub fn krippendorff_alpha(units: &[Vec<Option<u16>>]) -> Option<f64> {
    let mut o: BTreeMap<(u16, u16), f64> = BTreeMap::new();
    for unit in units {
        let vals: Vec<u16> = unit.iter().flatten().copied().collect();
        let m = vals.len();
        if m < 2 {
            continue;
        }
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    *o.entry((vals[i], vals[j])).or_insert(0.0) += 1.0 / (m - 1) as f64;
                }
            }
        }
    }
    if o.is_empty() {
        return None;
    }
    let mut n_c: BTreeMap<u16, f64> = BTreeMap::new();
    for (&(c, _), &v) in &o {
        *n_c.entry(c).or_insert(0.0) += v;
    }
    let n: f64 = n_c.values().sum();
    let d_o: f64 = o
        .iter()
        .filter(|((c, k), _)| c != k)
        .map(|(_, v)| v)
        .sum::<f64>()
        / n;
    let mut d_e = 0.0;
    for (c, nc) in &n_c {
        for (k, nk) in &n_c {
            if c != k {
                d_e += nc * nk;
            }
        }
    }
    d_e /= n * (n - 1.0);
    if d_e == 0.0 {
        return None;
    }
    Some(1.0 - d_o / d_e)
}

fn coords(i: usize, dims: &[usize]) -> Vec<usize> {
    let mut rest = i;
    let mut c = vec![0; dims.len()];
    for ax in (0..dims.len()).rev() {
        c[ax] = rest % dims[ax];
        rest /= dims[ax];
    }
    c
}

fn index(c: &[usize], dims: &[usize]) -> usize {
    c.iter().zip(dims).fold(0, |acc, (&x, &d)| acc * d + x)
}

/// Foreground voxels touching background or the grid edge across a face.
pub fn boundary(bits: &[bool], dims: &[usize]) -> Vec<usize> {
    (0..bits.len())
        .filter(|&i| {
            if !bits[i] {
                return false;
            }
            let c = coords(i, dims);
            (0..dims.len()).any(|ax| {
                if c[ax] == 0 || c[ax] + 1 == dims[ax] {
                    return true;
                }
                let mut lo = c.clone();
                lo[ax] -= 1;
                let mut hi = c.clone();
                hi[ax] += 1;
                !bits[index(&lo, dims)] || !bits[index(&hi, dims)]
            })
        })
        .collect()
}

/// `(hausdorff, hd95, assd)` from all boundary pairs; `None` if either
/// boundary is empty.
pub fn surface_distances(
    a: &[bool],
    b: &[bool],
    dims: &[usize],
    spacing: &[f64],
) -> Option<(f64, f64, f64)> {
    let (ba, bb) = (boundary(a, dims), boundary(b, dims));
    if ba.is_empty() || bb.is_empty() {
        return None;
    }
    let dist = |i: usize, j: usize| -> f64 {
        let (p, q) = (coords(i, dims), coords(j, dims));
        (0..dims.len())
            .map(|ax| ((p[ax] as f64 - q[ax] as f64) * spacing[ax]).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let nearest = |from: &[usize], to: &[usize]| -> Vec<f64> {
        from.iter()
            .map(|&i| to.iter().map(|&j| dist(i, j)).fold(f64::INFINITY, f64::min))
            .collect()
    };
    let mut pool = nearest(&ba, &bb);
    pool.extend(nearest(&bb, &ba));
    let assd = pool.iter().sum::<f64>() / pool.len() as f64;
    pool.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let rank = (95 * pool.len() + 99) / 100;
    Some((*pool.last().unwrap(), pool[rank - 1], assd))
}

/// IoU between every pair of nonzero instance ids.
pub fn iou_table(a: &[u16], b: &[u16]) -> BTreeMap<(u16, u16), f64> {
    let ids = |v: &[u16]| -> BTreeSet<u16> { v.iter().copied().filter(|&l| l != 0).collect() };
    let mut out = BTreeMap::new();
    for x in ids(a) {
        for y in ids(b) {
            let sa: BTreeSet<usize> = (0..a.len()).filter(|&i| a[i] == x).collect();
            let sb: BTreeSet<usize> = (0..b.len()).filter(|&i| b[i] == y).collect();
            let inter = sa.intersection(&sb).count();
            if inter > 0 {
                let union = sa.union(&sb).count();
                out.insert((x, y), inter as f64 / union as f64);
            }
        }
    }
    out
}

/// Best achievable total IoU over all one-to-one matchings restricted to
/// pairs with IoU ≥ threshold, by exhaustive search. Returns the chosen IoUs.
pub fn best_matching(a: &[u16], b: &[u16], threshold: f64) -> Vec<f64> {
    let table = iou_table(a, b);
    let ids_a: Vec<u16> = a
        .iter()
        .copied()
        .filter(|&l| l != 0)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let ids_b: Vec<u16> = b
        .iter()
        .copied()
        .filter(|&l| l != 0)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    fn go(
        k: usize,
        ids_a: &[u16],
        ids_b: &[u16],
        used: &mut Vec<bool>,
        chosen: &mut Vec<f64>,
        table: &BTreeMap<(u16, u16), f64>,
        threshold: f64,
        best: &mut (f64, Vec<f64>),
    ) {
        if k == ids_a.len() {
            let total: f64 = chosen.iter().sum();
            if total > best.0 {
                *best = (total, chosen.clone());
            }
            return;
        }
        go(k + 1, ids_a, ids_b, used, chosen, table, threshold, best);
        for (j, &y) in ids_b.iter().enumerate() {
            if used[j] {
                continue;
            }
            if let Some(&iou) = table.get(&(ids_a[k], y)) {
                if iou >= threshold {
                    used[j] = true;
                    chosen.push(iou);
                    go(k + 1, ids_a, ids_b, used, chosen, table, threshold, best);
                    chosen.pop();
                    used[j] = false;
                }
            }
        }
    }
    let mut best = (0.0, vec![]);
    go(
        0,
        &ids_a,
        &ids_b,
        &mut vec![false; ids_b.len()],
        &mut vec![],
        &table,
        threshold,
        &mut best,
    );
    best.1
}

/// Connected components of the nonzero voxels (face adjacency).
pub fn components(bits: &[bool], dims: &[usize]) -> usize {
    let mut seen = vec![false; bits.len()];
    let mut count = 0;
    for start in 0..bits.len() {
        if !bits[start] || seen[start] {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            let c = coords(i, dims);
            for ax in 0..dims.len() {
                for step in [-1i64, 1] {
                    let x = c[ax] as i64 + step;
                    if x < 0 || x >= dims[ax] as i64 {
                        continue;
                    }
                    let mut d = c.clone();
                    d[ax] = x as usize;
                    let j = index(&d, dims);
                    if bits[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
    }
    count
}
