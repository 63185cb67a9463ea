//! SPSA and k-SPSA gradient estimates from loss evaluations only.
//!
//! One sample perturbs the iterate along a Gaussian direction p and forms
//! `(L(x+εp; B) − L(x−εp; B)) / (2ε) · p`; a k-sample estimate averages k
//! such samples with fresh directions and a shared batch. Perturbations are
//! never stored: the direction is streamed into a scratch vector for each of
//! the two evaluations and regenerated from its `(seed, counter)` address
//! when the estimate is accumulated.
//!
//! Moment checks against the estimator live here too: the squared-norm
//! ratio E[‖ĝ‖²]/‖∇L‖² (which for Gaussian directions equals (d+k+1)/k in
//! the ε→0 limit) and the full second-moment identity
//! E[ĝĝᵀ] = (1+1/k)(∇L∇Lᵀ + Σ/B) + (1/k)·I·(‖∇L‖² + tr Σ/B) with Σ the
//! minibatch gradient covariance.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Batch;
use crate::objective::Objective;
use crate::rng::{self, StreamKind};

/// Perturbation scale: either a fixed positive value or the
/// iterate-dependent default 1e-4·(1+‖x‖₂).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Epsilon {
    Auto(AutoTag),
    Fixed(f64),
}

/// Serde helper: the literal string "auto".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AutoTag {
    #[serde(rename = "auto")]
    Auto,
}

impl Epsilon {
    pub fn auto() -> Self {
        Epsilon::Auto(AutoTag::Auto)
    }

    pub fn resolve(&self, x: &Array1<f64>) -> f64 {
        match self {
            Epsilon::Fixed(e) => *e,
            Epsilon::Auto(_) => {
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                1e-4 * (1.0 + norm)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpsaConfig {
    #[serde(default = "default_epsilon")]
    pub epsilon: Epsilon,
    #[serde(default = "default_k")]
    pub k_samples: usize,
    pub seed: u64,
}

fn default_epsilon() -> Epsilon {
    Epsilon::auto()
}

fn default_k() -> usize {
    1
}

impl SpsaConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            epsilon: Epsilon::auto(),
            k_samples: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Epsilon::Fixed(e) = self.epsilon {
            if !(e > 0.0) {
                return Err(Error::Config(format!(
                    "perturbation scale must be positive, got {e}"
                )));
            }
        }
        if self.k_samples == 0 {
            return Err(Error::Config("k_samples must be at least 1".into()));
        }
        Ok(())
    }
}

/// One zeroth-order gradient estimate.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub g_hat: Array1<f64>,
    /// Block indices the loss was evaluated on.
    pub batch: Vec<usize>,
    /// Loss evaluations consumed: always 2·k_samples.
    pub evals: usize,
}

/// Re-exported from the stream module: the perturbation at `(seed, counter)`.
pub use crate::rng::sample_perturbation;

/// k-SPSA estimate at `x` on the given batch. `counter_base` addresses the
/// perturbation streams: sample i of this estimate uses counter
/// `counter_base·k + i`, so consecutive iterations consume disjoint ranges
/// and the whole estimate is a pure function of
/// `(objective, x, batch, cfg, counter_base)`.
pub fn spsa_estimate<O: Objective>(
    objective: &O,
    x: &Array1<f64>,
    batch: Batch,
    cfg: &SpsaConfig,
    counter_base: u64,
) -> Result<Estimate> {
    cfg.validate()?;
    let eps = cfg.epsilon.resolve(x);
    if !(eps > 0.0) {
        return Err(Error::Config(format!("resolved epsilon {eps} not positive")));
    }
    let k = cfg.k_samples;
    let dim = objective.dim();
    let mut g_hat = Array1::<f64>::zeros(dim);
    let mut scratch = Array1::<f64>::zeros(dim);
    for i in 0..k {
        let counter = counter_base * k as u64 + i as u64;
        // +ε pass: stream the direction into the scratch iterate.
        scratch.assign(x);
        rng::perturb_in_place(&mut scratch, cfg.seed, counter, eps);
        let l_plus = objective.loss(&scratch, batch)?;
        // −ε pass: walk the same stream with −2ε.
        rng::perturb_in_place(&mut scratch, cfg.seed, counter, -2.0 * eps);
        let l_minus = objective.loss(&scratch, batch)?;
        let coef = (l_plus - l_minus) / (2.0 * eps);
        // Regenerate the direction to accumulate coef·p.
        let mut stream = rng::stream(cfg.seed, StreamKind::Perturbation, counter);
        for gi in g_hat.iter_mut() {
            let p: f64 = rand::Rng::sample(&mut stream, rand_distr::StandardNormal);
            *gi += coef * p;
        }
    }
    g_hat /= k as f64;
    if g_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite SPSA estimate".into()));
    }
    let ids = match batch {
        Some(ids) => ids.to_vec(),
        None => (0..objective.n_blocks()).collect(),
    };
    Ok(Estimate {
        g_hat,
        batch: ids,
        evals: 2 * k,
    })
}

/// Monte-Carlo mean of ‖ĝ‖² divided by ‖∇L(x; batch)‖², batch held fixed so
/// the only randomness is the perturbation.
#[derive(Debug, Clone, Serialize)]
pub struct SqNormRatio {
    pub ratio: f64,
    pub mean_sq_estimate: f64,
    pub grad_sq_norm: f64,
    pub trials: usize,
}

pub fn sq_norm_ratio_check<O: Objective>(
    objective: &O,
    x: &Array1<f64>,
    batch: Batch,
    k: usize,
    trials: usize,
    seed: u64,
) -> Result<SqNormRatio> {
    if trials < 10_000 {
        return Err(Error::Config(format!(
            "squared-norm ratio check needs at least 1e4 trials, got {trials}"
        )));
    }
    let grad = objective.grad(x, batch)?;
    let grad_sq: f64 = grad.iter().map(|v| v * v).sum();
    if grad_sq == 0.0 {
        return Err(Error::Degenerate(
            "gradient vanishes at the anchor; ratio undefined".into(),
        ));
    }
    let cfg = SpsaConfig {
        epsilon: Epsilon::auto(),
        k_samples: k,
        seed,
    };
    let mut acc = 0.0;
    for t in 0..trials {
        let est = spsa_estimate(objective, x, batch, &cfg, t as u64)?;
        acc += est.g_hat.iter().map(|v| v * v).sum::<f64>();
    }
    let mean_sq = acc / trials as f64;
    Ok(SqNormRatio {
        ratio: mean_sq / grad_sq,
        mean_sq_estimate: mean_sq,
        grad_sq_norm: grad_sq,
        trials,
    })
}

/// Comparison of the Monte-Carlo second moment E[ĝĝᵀ] (random batch and
/// fresh perturbations per trial) against the analytic identity.
#[derive(Debug, Clone)]
pub struct SecondMomentReport {
    pub mc: Array2<f64>,
    pub reference: Array2<f64>,
    /// max over entries of |mc − ref| / |ref|.
    pub max_entrywise_rel_dev: f64,
    /// max over entries of |mc − ref| / max|ref|; insensitive to single
    /// near-zero reference entries.
    pub max_dev_over_scale: f64,
    pub sigma_trace: f64,
}

/// Minibatch gradient covariance Σ(x) = B·(E_B[∇L_B ∇L_Bᵀ] − ∇L∇Lᵀ), with
/// the batch expectation taken exactly over all C(n, B) subsets when that is
/// tractable and by Monte-Carlo otherwise. With B = n the only batch is the
/// full set and Σ is exactly zero.
pub fn minibatch_covariance(
    problem: &crate::model::SoftmaxProblem,
    x: &Array1<f64>,
    batch_size: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    let n = problem.n_blocks();
    if batch_size < 1 || batch_size > n {
        return Err(Error::InvalidInput(format!(
            "batch size {batch_size} out of range 1..={n}"
        )));
    }
    let d = problem.dim();
    let full = crate::calculus::grad_total(problem, x, None)?;
    let full_outer = Array2::from_shape_fn((d, d), |(i, j)| full[i] * full[j]);
    let mut acc = Array2::<f64>::zeros((d, d));
    let mut count = 0usize;
    if let Some(combos) = enumerate_batches(n, batch_size, 200_000) {
        for ids in combos {
            let g = crate::calculus::grad_total(problem, x, Some(&ids))?;
            acc += &(Array2::from_shape_fn((d, d), |(i, j)| g[i] * g[j]) - &full_outer);
            count += 1;
        }
    } else {
        let mut rng = rng::stream(seed, StreamKind::Diagnostics, 0);
        for _ in 0..20_000 {
            let ids = rng::sample_batch(&mut rng, n, batch_size);
            let g = crate::calculus::grad_total(problem, x, Some(&ids))?;
            acc += &(Array2::from_shape_fn((d, d), |(i, j)| g[i] * g[j]) - &full_outer);
            count += 1;
        }
    }
    Ok(acc * (batch_size as f64 / count as f64))
}

/// All size-k subsets of {0..n-1}, or None when there are more than `cap`.
pub fn enumerate_batches(n: usize, k: usize, cap: usize) -> Option<Vec<Vec<usize>>> {
    let mut total: usize = 1;
    for i in 0..k {
        total = total.checked_mul(n - i)?;
        total /= i + 1;
        if total > cap {
            return None;
        }
    }
    let mut out = Vec::with_capacity(total);
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        // next combination in lexicographic order
        let mut i = k;
        loop {
            if i == 0 {
                return Some(out);
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return Some(out);
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

pub fn second_moment_check(
    problem: &crate::model::SoftmaxProblem,
    x: &Array1<f64>,
    batch_size: usize,
    k: usize,
    trials: usize,
    seed: u64,
) -> Result<SecondMomentReport> {
    let n = problem.n_blocks();
    let d = problem.dim();
    let full = crate::calculus::grad_total(problem, x, None)?;
    let grad_sq: f64 = full.iter().map(|v| v * v).sum();
    let sigma = minibatch_covariance(problem, x, batch_size, seed ^ 0x5eed)?;
    let sigma_trace = (0..d).map(|i| sigma[[i, i]]).sum::<f64>();

    let kf = k as f64;
    let bf = batch_size as f64;
    let mut reference = Array2::from_shape_fn((d, d), |(i, j)| {
        (1.0 + 1.0 / kf) * (full[i] * full[j] + sigma[[i, j]] / bf)
    });
    for i in 0..d {
        reference[[i, i]] += (grad_sq + sigma_trace / bf) / kf;
    }

    let cfg = SpsaConfig {
        epsilon: Epsilon::auto(),
        k_samples: k,
        seed,
    };
    let mut batch_rng = rng::stream(seed, StreamKind::Batch, 1);
    let mut acc = Array2::<f64>::zeros((d, d));
    for t in 0..trials {
        let ids = rng::sample_batch(&mut batch_rng, n, batch_size);
        let est = spsa_estimate(problem, x, Some(&ids), &cfg, t as u64)?;
        let g = &est.g_hat;
        for i in 0..d {
            for j in 0..d {
                acc[[i, j]] += g[i] * g[j];
            }
        }
    }
    let mc = acc / trials as f64;

    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut max_rel: f64 = 0.0;
    let mut max_scaled: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let dev = (mc[[i, j]] - reference[[i, j]]).abs();
            if reference[[i, j]] != 0.0 {
                max_rel = max_rel.max(dev / reference[[i, j]].abs());
            } else if dev != 0.0 {
                max_rel = f64::INFINITY;
            }
            if scale > 0.0 {
                max_scaled = max_scaled.max(dev / scale);
            } else if dev != 0.0 {
                max_scaled = f64::INFINITY;
            }
        }
    }
    Ok(SecondMomentReport {
        mc,
        reference,
        max_entrywise_rel_dev: max_rel,
        max_dev_over_scale: max_scaled,
        sigma_trace,
    })
}
