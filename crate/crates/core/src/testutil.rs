//! Shared helpers for the unit-test suites.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::{Block, SoftmaxProblem};
use crate::rng::{sample_ball, stream, StreamKind};

/// Small random instance plus an anchor point. The anchor is scaled so no
/// block saturates its softmax (‖A_j x‖_∞ ≤ 2), keeping gradients well away
/// from the underflow regime where relative comparisons degrade.
pub(crate) fn random_instance(
    seed: u64,
    n_blocks: usize,
    n_rows: usize,
    dim: usize,
    radius: f64,
) -> (SoftmaxProblem, Array1<f64>) {
    let mut rng = stream(seed, StreamKind::Instance, 0);
    let mut blocks = Vec::new();
    for _ in 0..n_blocks {
        let g = Array2::from_shape_fn((n_rows, dim), |_| rng.sample::<f64, _>(StandardNormal));
        let norm = crate::linalg::spectral_norm(&g).unwrap();
        let a = g * (radius / norm);
        let raw: Vec<f64> = (0..n_rows).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = raw.iter().sum();
        let scale: f64 = 0.5 + 0.5 * rng.random::<f64>();
        let b = Array1::from(raw) * (scale / total);
        blocks.push(Block { a, b });
    }
    let w = Array1::from_iter((0..n_rows).map(|_| rng.random::<f64>()));
    let p = SoftmaxProblem::new(blocks, w, radius).unwrap();
    let mut x = sample_ball(&mut rng, dim, 1.0);
    let worst = p
        .blocks()
        .iter()
        .map(|blk| blk.a.dot(&x).iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .fold(0.0f64, f64::max);
    if worst > 2.0 {
        x *= 2.0 / worst;
    }
    (p, x)
}
