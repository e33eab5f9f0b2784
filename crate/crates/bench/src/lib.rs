//! Shared fixtures for the kernel benchmarks.

use rand::prelude::*;

use ctp_core::similarity::{FeatureBatch, Modality};

/// Deterministic normalized batches of the given size.
pub fn unit_batches(b: usize, d: usize, seed: u64) -> (FeatureBatch, FeatureBatch, FeatureBatch) {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut make = |modality| {
        let rows = (0..b)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        FeatureBatch::new(modality, rows)
            .expect("random rows are valid")
            .normalized()
            .expect("random rows are nonzero")
    };
    (
        make(Modality::Text),
        make(Modality::Image),
        make(Modality::Point),
    )
}

/// Deterministic random point cloud.
pub fn random_cloud(n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]
        })
        .collect()
}
