//! Benchmark fixtures for the core kernels.

use pgt_core::sim::{generate_phantom, simulate_rater, PhantomSpec, RaterNoiseModel};
use pgt_core::LabelGrid;

pub fn phantom(side: usize, seed: u64) -> LabelGrid {
    generate_phantom(&PhantomSpec {
        dims: vec![side, side],
        seed,
        ..Default::default()
    })
    .expect("default phantom")
}

pub fn raters(truth: &LabelGrid, n: u64) -> Vec<LabelGrid> {
    let noise = RaterNoiseModel {
        flip_prob: 0.05,
        boundary_jitter: 1,
        ..Default::default()
    };
    (0..n)
        .map(|j| simulate_rater(truth, &noise, j, 0).expect("rater"))
        .collect()
}
