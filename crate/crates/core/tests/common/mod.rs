#![allow(dead_code)]

use std::sync::Arc;

use pointwise_ocp::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn unit_mesh(n: usize) -> Arc<Mesh> {
    Arc::new(build_structured_mesh(n, Rectangle::UNIT_SQUARE).unwrap())
}

/// Cubic reaction, constant source, two tracking points with nonzero mismatch.
pub fn cubic_problem(n: usize) -> Problem {
    let tracking = TrackingData::new(vec![Point::new(0.3, 0.4), Point::new(0.7, 0.6)], vec![0.5, -0.2]);
    Problem::new(unit_mesh(n), Nonlinearity::Cubic, Source::Constant(10.0), tracking, 1e-2, Bounds::new(0.0, 2.0).unwrap())
        .unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Cellwise values uniform in `[lo, hi]`.
pub fn random_control(rng: &mut ChaCha8Rng, cells: usize, lo: f64, hi: f64) -> ControlField {
    ControlField { values: (0..cells).map(|_| rng.random_range(lo..hi)).collect() }
}

pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn rel_l2(a: &[f64], reference: &[f64]) -> f64 {
    l2(&diff(a, reference)) / l2(reference)
}
