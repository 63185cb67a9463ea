//! Counter-addressed random streams.
//!
//! Every random quantity in the toolkit is drawn from a ChaCha8 stream
//! addressed by `(seed, tag, counter)`: the seed keys the cipher, and the
//! 64-bit stream id packs a role tag in the high byte with a counter below
//! it. Regenerating a stream from the same address reproduces the same
//! draws, which is what lets the SPSA estimator re-materialize a
//! perturbation instead of storing it, and what makes whole runs replayable
//! from `(seed, iteration, sample)` alone. Normal variates come from
//! `rand_distr::StandardNormal` over the addressed stream; bit-exactness is
//! promised within this implementation only.

use ndarray::Array1;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Role tags; each gets a disjoint stream namespace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    /// SPSA perturbation vectors, one counter per (iteration, sample).
    Perturbation,
    /// Minibatch selection, one counter per iteration.
    Batch,
    /// Instance generation.
    Instance,
    /// Diagnostics sampling (anchor points, Monte-Carlo trials).
    Diagnostics,
    /// Initial iterates.
    Init,
}

impl StreamKind {
    fn tag(self) -> u64 {
        match self {
            StreamKind::Perturbation => 1,
            StreamKind::Batch => 2,
            StreamKind::Instance => 3,
            StreamKind::Diagnostics => 4,
            StreamKind::Init => 5,
        }
    }
}

const COUNTER_BITS: u32 = 56;
const COUNTER_MASK: u64 = (1 << COUNTER_BITS) - 1;

/// The stream addressed by `(seed, kind, counter)`, positioned at its start.
pub fn stream(seed: u64, kind: StreamKind, counter: u64) -> ChaCha8Rng {
    debug_assert!(counter <= COUNTER_MASK, "stream counter overflow");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((kind.tag() << COUNTER_BITS) | (counter & COUNTER_MASK));
    rng
}

/// i.i.d. standard normal vector from the perturbation stream at `counter`.
/// Deterministic: the same `(seed, counter, dim)` always yields the same
/// vector.
pub fn sample_perturbation(seed: u64, counter: u64, dim: usize) -> Array1<f64> {
    let mut rng = stream(seed, StreamKind::Perturbation, counter);
    Array1::from_iter((0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Streams the perturbation at `counter` entrywise into `x += scale · p`
/// without materializing `p`. Walking the stream again with the opposite
/// scale undoes the perturbation up to rounding.
pub fn perturb_in_place(x: &mut Array1<f64>, seed: u64, counter: u64, scale: f64) {
    let mut rng = stream(seed, StreamKind::Perturbation, counter);
    for xi in x.iter_mut() {
        let p: f64 = rng.sample(StandardNormal);
        *xi += scale * p;
    }
}

/// Uniform draw from the ball ‖x‖₂ ≤ radius.
pub fn sample_ball(rng: &mut impl Rng, dim: usize, radius: f64) -> Array1<f64> {
    let mut v = Array1::from_iter((0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm > 0.0 {
        let u: f64 = rng.random::<f64>();
        v *= radius * u.powf(1.0 / dim as f64) / norm;
    }
    v
}

/// Uniform subset of `{0, .., n-1}` of the given size, without replacement,
/// returned sorted so a full batch lists the blocks in natural order.
pub fn sample_batch(rng: &mut impl Rng, n: usize, size: usize) -> Vec<usize> {
    assert!(size >= 1 && size <= n, "batch size out of range");
    let mut ids = rand::seq::index::sample(rng, n, size).into_vec();
    ids.sort_unstable();
    ids
}
