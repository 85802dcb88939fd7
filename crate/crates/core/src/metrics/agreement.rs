//! Chance-corrected categorical agreement: Cohen's kappa (two raters),
//! Fleiss' kappa (fixed rater count) and nominal Krippendorff's alpha
//! (missing ratings allowed).

use std::collections::BTreeMap;

use super::{MetricError, MetricId, MetricResult};

/// Cohen's kappa between two category sequences.
///
/// Evaluated in exact integer arithmetic as `(N·agree − S) / (N² − S)` with
/// `S = Σ_c n_a(c)·n_b(c)`, which equals `(p_o − p_e) / (1 − p_e)`.
pub fn cohen_kappa<T: Ord>(a: &[T], b: &[T]) -> Result<MetricResult, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch {
            a: a.len(),
            b: b.len(),
        });
    }
    if a.is_empty() {
        return Err(MetricError::Empty);
    }
    let n = a.len() as u128;
    let mut marg_a: BTreeMap<&T, u128> = BTreeMap::new();
    let mut marg_b: BTreeMap<&T, u128> = BTreeMap::new();
    let mut agree = 0u128;
    for (x, y) in a.iter().zip(b) {
        *marg_a.entry(x).or_insert(0) += 1;
        *marg_b.entry(y).or_insert(0) += 1;
        agree += (x == y) as u128;
    }
    let chance: u128 = marg_a
        .iter()
        .map(|(c, &na)| na * marg_b.get(c).copied().unwrap_or(0))
        .sum();
    if chance == n * n {
        // both raters constant on the same category
        return Ok(if agree == n {
            MetricResult::defined(MetricId::CohenKappa, 1.0)
        } else {
            MetricResult::undefined(MetricId::CohenKappa, "expected agreement is 1")
        });
    }
    let num = (n * agree) as f64 - chance as f64;
    let den = (n * n - chance) as f64;
    Ok(MetricResult::defined(MetricId::CohenKappa, num / den))
}

/// Fleiss' kappa from an item × category count matrix where every row sums
/// to `raters_per_item`.
pub fn fleiss_kappa(
    ratings: &[Vec<u64>],
    raters_per_item: u64,
) -> Result<MetricResult, MetricError> {
    if ratings.is_empty() {
        return Err(MetricError::Empty);
    }
    if raters_per_item < 2 {
        return Err(MetricError::TooFewRaters(raters_per_item));
    }
    let n = raters_per_item as f64;
    let n_cat = ratings.iter().map(Vec::len).max().unwrap_or(0);
    let mut cat_totals = vec![0u64; n_cat];
    let mut p_bar = 0.0;
    for (item, row) in ratings.iter().enumerate() {
        let sum: u64 = row.iter().sum();
        if sum != raters_per_item {
            return Err(MetricError::RowSum {
                item,
                got: sum,
                expected: raters_per_item,
            });
        }
        let sq: u64 = row.iter().map(|c| c * c).sum();
        p_bar += (sq - raters_per_item) as f64 / (n * (n - 1.0));
        for (j, &c) in row.iter().enumerate() {
            cat_totals[j] += c;
        }
    }
    let n_items = ratings.len() as f64;
    p_bar /= n_items;
    let total = n_items * n;
    let p_e: f64 = cat_totals
        .iter()
        .map(|&c| {
            let p = c as f64 / total;
            p * p
        })
        .sum();
    let den = 1.0 - p_e;
    if den.abs() < 1e-15 {
        return Ok(MetricResult::undefined(
            MetricId::FleissKappa,
            "expected agreement is 1",
        ));
    }
    Ok(MetricResult::defined(
        MetricId::FleissKappa,
        (p_bar - p_e) / den,
    ))
}

/// Nominal Krippendorff's alpha from an item × rater matrix with missing
/// entries, via the coincidence matrix. Items with fewer than two ratings
/// are not pairable and are ignored.
pub fn krippendorff_alpha_nominal<T: Ord + Clone>(
    ratings: &[Vec<Option<T>>],
) -> Result<MetricResult, MetricError> {
    // coincidences[(c, k)] accumulated per unit as n_uc·n_uk/(m_u − 1)
    // (with n_uc·(n_uc − 1) on the diagonal)
    let mut coincidences: BTreeMap<(T, T), f64> = BTreeMap::new();
    for row in ratings {
        let mut counts: BTreeMap<&T, u64> = BTreeMap::new();
        for v in row.iter().flatten() {
            *counts.entry(v).or_insert(0) += 1;
        }
        let m: u64 = counts.values().sum();
        if m < 2 {
            continue;
        }
        let scale = 1.0 / (m - 1) as f64;
        for (&c, &nc) in &counts {
            for (&k, &nk) in &counts {
                let pairs = if c == k { nc * (nc - 1) } else { nc * nk };
                if pairs > 0 {
                    *coincidences.entry((c.clone(), k.clone())).or_insert(0.0) +=
                        pairs as f64 * scale;
                }
            }
        }
    }
    if coincidences.is_empty() {
        return Ok(MetricResult::undefined(
            MetricId::KrippendorffAlpha,
            "no pairable values",
        ));
    }
    let mut marginals: BTreeMap<&T, f64> = BTreeMap::new();
    for ((c, _), &o) in &coincidences {
        *marginals.entry(c).or_insert(0.0) += o;
    }
    let n: f64 = marginals.values().sum();
    let observed: f64 = coincidences
        .iter()
        .filter(|((c, k), _)| c != k)
        .map(|(_, &o)| o)
        .sum();
    let sum_sq: f64 = marginals.values().map(|&m| m * m).sum();
    let expected_pairs = n * n - sum_sq;
    if expected_pairs <= 0.0 {
        return Ok(MetricResult::undefined(
            MetricId::KrippendorffAlpha,
            "expected disagreement is 0",
        ));
    }
    let alpha = 1.0 - (n - 1.0) * observed / expected_pairs;
    Ok(MetricResult::defined(MetricId::KrippendorffAlpha, alpha))
}
