use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::{MetricError, MetricId, MetricResult};
use crate::grid::{BinaryMask, Label, LabelGrid};

/// Joint label counts of two equally shaped grids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ContingencyTable {
    counts: BTreeMap<(Label, Label), u64>,
}

impl ContingencyTable {
    pub fn get(&self, a: Label, b: Label) -> u64 {
        self.counts.get(&(a, b)).copied().unwrap_or(0)
    }

    /// Nonzero cells in `(a_label, b_label)` order.
    pub fn cells(&self) -> impl Iterator<Item = ((Label, Label), u64)> + '_ {
        self.counts.iter().map(|(&k, &v)| (k, v))
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn row_totals(&self) -> BTreeMap<Label, u64> {
        let mut out = BTreeMap::new();
        for (&(a, _), &n) in &self.counts {
            *out.entry(a).or_insert(0) += n;
        }
        out
    }

    pub fn col_totals(&self) -> BTreeMap<Label, u64> {
        let mut out = BTreeMap::new();
        for (&(_, b), &n) in &self.counts {
            *out.entry(b).or_insert(0) += n;
        }
        out
    }
}

pub fn contingency(a: &LabelGrid, b: &LabelGrid) -> Result<ContingencyTable, MetricError> {
    a.same_geometry(b)?;
    let mut counts: HashMap<(Label, Label), u64> = HashMap::new();
    for (&x, &y) in a.voxels().iter().zip(b.voxels()) {
        *counts.entry((x, y)).or_insert(0) += 1;
    }
    Ok(ContingencyTable {
        counts: counts.into_iter().collect(),
    })
}

fn overlap_counts(a: &BinaryMask, b: &BinaryMask) -> Result<(u64, u64, u64), MetricError> {
    a.same_geometry(b)?;
    let (mut na, mut nb, mut inter) = (0u64, 0u64, 0u64);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        na += x as u64;
        nb += y as u64;
        inter += (x && y) as u64;
    }
    Ok((na, nb, inter))
}

fn dice_from_counts(na: u64, nb: u64, inter: u64) -> f64 {
    if na + nb == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (na + nb) as f64
    }
}

/// `2|A∩B| / (|A|+|B|)`; two empty masks agree perfectly.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<MetricResult, MetricError> {
    let (na, nb, inter) = overlap_counts(a, b)?;
    Ok(MetricResult::defined(
        MetricId::Dice,
        dice_from_counts(na, nb, inter),
    ))
}

/// `|A∩B| / |A∪B|`; two empty masks agree perfectly.
pub fn jaccard(a: &BinaryMask, b: &BinaryMask) -> Result<MetricResult, MetricError> {
    let (na, nb, inter) = overlap_counts(a, b)?;
    let union = na + nb - inter;
    let value = if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    };
    Ok(MetricResult::defined(MetricId::Jaccard, value))
}

pub fn voxel_agreement(a: &LabelGrid, b: &LabelGrid) -> Result<MetricResult, MetricError> {
    a.same_geometry(b)?;
    let equal = a
        .voxels()
        .iter()
        .zip(b.voxels())
        .filter(|(x, y)| x == y)
        .count();
    Ok(MetricResult::defined(
        MetricId::VoxelAgreement,
        equal as f64 / a.len() as f64,
    ))
}

/// Unweighted mean of per-label Dice over nonzero labels present in either grid.
pub fn mean_label_dice(a: &LabelGrid, b: &LabelGrid) -> Result<MetricResult, MetricError> {
    let table = contingency(a, b)?;
    let rows = table.row_totals();
    let cols = table.col_totals();
    let labels: BTreeSet<Label> = rows
        .keys()
        .chain(cols.keys())
        .copied()
        .filter(|&l| l != 0)
        .collect();
    if labels.is_empty() {
        return Ok(MetricResult::undefined(
            MetricId::MeanLabelDice,
            "no foreground labels in either grid",
        ));
    }
    let sum: f64 = labels
        .iter()
        .map(|&l| {
            let na = rows.get(&l).copied().unwrap_or(0);
            let nb = cols.get(&l).copied().unwrap_or(0);
            dice_from_counts(na, nb, table.get(l, l))
        })
        .sum();
    Ok(MetricResult::defined(
        MetricId::MeanLabelDice,
        sum / labels.len() as f64,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(rows: usize, cols: usize, set: &[(usize, usize)]) -> BinaryMask {
        let mut bits = vec![false; rows * cols];
        for &(r, c) in set {
            bits[r * cols + c] = true;
        }
        BinaryMask::new(vec![rows, cols], bits).unwrap()
    }

    fn grid(v: &[Label]) -> LabelGrid {
        LabelGrid::new(vec![1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn contingency_hand_enumerated() {
        let t = contingency(&grid(&[0, 1]), &grid(&[1, 0])).unwrap();
        assert_eq!(
            t.cells().collect::<Vec<_>>(),
            vec![((0, 1), 1), ((1, 0), 1)]
        );
        let d = contingency(&grid(&[0, 1, 2, 2]), &grid(&[0, 1, 2, 2])).unwrap();
        assert!(d.cells().all(|((x, y), _)| x == y));
        assert_eq!(d.get(2, 2), 2);
    }

    #[test]
    fn dice_cases() {
        let a = mask(2, 2, &[(0, 0), (0, 1)]);
        let b = mask(2, 2, &[(0, 1), (1, 1)]);
        assert_eq!(dice(&a, &a).unwrap().value, Some(1.0));
        assert_eq!(
            dice(&a, &mask(2, 2, &[(1, 0), (1, 1)])).unwrap().value,
            Some(0.0)
        );
        assert_eq!(dice(&a, &b).unwrap().value, Some(0.5));
        let empty = mask(2, 2, &[]);
        assert_eq!(dice(&empty, &empty).unwrap().value, Some(1.0));
        assert_eq!(dice(&empty, &a).unwrap().value, Some(0.0));
    }

    #[test]
    fn jaccard_cases() {
        let a = mask(2, 2, &[(0, 0), (0, 1)]);
        let b = mask(2, 2, &[(0, 1), (1, 1)]);
        assert_eq!(jaccard(&a, &a).unwrap().value, Some(1.0));
        assert_eq!(jaccard(&a, &b).unwrap().value, Some(1.0 / 3.0));
        let empty = mask(2, 2, &[]);
        assert_eq!(jaccard(&empty, &empty).unwrap().value, Some(1.0));
    }

    #[test]
    fn dim_mismatch_is_an_error() {
        let a = mask(2, 2, &[]);
        let b = mask(1, 4, &[]);
        assert!(dice(&a, &b).is_err());
        assert!(jaccard(&a, &b).is_err());
        assert!(voxel_agreement(&a.to_grid(), &b.to_grid()).is_err());
    }

    #[test]
    fn voxel_agreement_cases() {
        assert_eq!(
            voxel_agreement(&grid(&[0, 3, 1]), &grid(&[0, 3, 1]))
                .unwrap()
                .value,
            Some(1.0)
        );
        assert_eq!(
            voxel_agreement(&grid(&[0, 1, 1]), &grid(&[1, 0, 0]))
                .unwrap()
                .value,
            Some(0.0)
        );
    }

    #[test]
    fn mean_label_dice_cases() {
        let a = grid(&[1, 2, 0, 2]);
        assert_eq!(mean_label_dice(&a, &a).unwrap().value, Some(1.0));
        assert_eq!(
            mean_label_dice(&grid(&[1, 1, 0, 0]), &grid(&[0, 0, 2, 2]))
                .unwrap()
                .value,
            Some(0.0)
        );
        assert!(!mean_label_dice(&grid(&[0, 0]), &grid(&[0, 0]))
            .unwrap()
            .is_defined());
        // label 1: dice 2/3, label 2: dice 0
        let v = mean_label_dice(&grid(&[1, 1, 0]), &grid(&[1, 0, 2]))
            .unwrap()
            .value
            .unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    fn arb_pair() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
        (1usize..9, 1usize..9).prop_flat_map(|(r, c)| {
            (
                prop::collection::vec(any::<bool>(), r * c),
                prop::collection::vec(any::<bool>(), r * c),
            )
                .prop_map(move |(x, y)| {
                    (
                        BinaryMask::new(vec![r, c], x).unwrap(),
                        BinaryMask::new(vec![r, c], y).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn jaccard_dice_identity((a, b) in arb_pair()) {
            let d = dice(&a, &b).unwrap().value.unwrap();
            let j = jaccard(&a, &b).unwrap().value.unwrap();
            prop_assert!((j - d / (2.0 - d)).abs() < 1e-12);
            prop_assert!(j <= d + 1e-15);
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(dice(&b, &a).unwrap().value, Some(d));
            prop_assert_eq!(jaccard(&b, &a).unwrap().value, Some(j));
        }

        #[test]
        fn contingency_total_is_voxel_count(
            v in prop::collection::vec((0u16..4, 0u16..4), 1..64)
        ) {
            let a = grid(&v.iter().map(|p| p.0).collect::<Vec<_>>());
            let b = grid(&v.iter().map(|p| p.1).collect::<Vec<_>>());
            let t = contingency(&a, &b).unwrap();
            prop_assert_eq!(t.total(), v.len() as u64);
            for ((x, y), n) in t.cells() {
                prop_assert_eq!(n, v.iter().filter(|p| **p == (x, y)).count() as u64);
            }
        }

        #[test]
        fn dice_strictly_decreases_as_voxels_are_removed(
            bits in prop::collection::vec(any::<bool>(), 64)
        ) {
            let a = BinaryMask::new(vec![8, 8], bits.clone()).unwrap();
            let fg: Vec<usize> = (0..64).filter(|&i| bits[i]).collect();
            let mut prev = 1.0;
            let mut cur = bits.clone();
            for &i in fg.iter().take(fg.len().saturating_sub(1)) {
                cur[i] = false;
                let b = BinaryMask::new(vec![8, 8], cur.clone()).unwrap();
                let d = dice(&a, &b).unwrap().value.unwrap();
                prop_assert!(d < prev);
                prev = d;
            }
        }
    }
}
