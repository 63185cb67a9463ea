//! Constants and inequality checks of the convergence analysis, evaluated on
//! concrete instances.
//!
//! Everything that involves exp(5R²)-scale factors is computed and reported
//! in natural-log space: at theorem scale (R ≥ 4) those constants dwarf any
//! measured quantity, so the checks compare logs. Empirical counterparts
//! (l_emp, mu_emp, alpha_emp) come from sampling the ball ‖x‖₂ ≤ R, the
//! region the analysis assumes.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::calculus;
use crate::error::{Error, Result};
use crate::estimator::minibatch_covariance;
use crate::linalg;
use crate::model::SoftmaxProblem;
use crate::optimizer::{l_star_oracle, RunTrace};
use crate::rng::{self, StreamKind};

/// Tolerance below which singular values are rounding noise, as a fraction
/// of σ_max.
pub const RANK_REL_TOL: f64 = 1e-8;

/// ‖M‖_F² / ‖M‖².
pub fn stable_rank(m: &Array2<f64>) -> Result<f64> {
    let spec = linalg::spectral_norm(m)?;
    if spec == 0.0 {
        return Err(Error::Degenerate("stable rank of the zero matrix".into()));
    }
    let fro = linalg::frobenius_norm(m);
    Ok((fro / spec).powi(2))
}

/// tr(M) / ‖M‖ for PSD M (min eigenvalue ≥ −1e-10 tolerated as rounding).
pub fn effective_rank(m: &Array2<f64>) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidInput("effective rank needs a square matrix".into()));
    }
    let eigs = linalg::sym_eigenvalues(m)?;
    let min = eigs.first().copied().unwrap_or(0.0);
    if min < -1e-10 {
        return Err(Error::InvalidInput(format!(
            "matrix is not PSD: min eigenvalue {min}"
        )));
    }
    let spec = eigs.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if spec == 0.0 {
        return Err(Error::Degenerate("effective rank of the zero matrix".into()));
    }
    let tr: f64 = (0..m.nrows()).map(|i| m[[i, i]]).sum();
    Ok(tr / spec)
}

/// Number of singular values above `RANK_REL_TOL · σ_max`.
pub fn numerical_rank(m: &Array2<f64>) -> Result<usize> {
    linalg::numerical_rank(m, RANK_REL_TOL)
}

/// The dimension factor γ = (d²·√(2d+2)·κ² + d − 2) / (k(d+2)) + 1: the
/// multiplicative slowdown of the zeroth-order step's quadratic term.
pub fn gamma_factor(d: usize, k: usize, kappa: f64) -> f64 {
    let df = d as f64;
    (df * df * (2.0 * df + 2.0).sqrt() * kappa * kappa + df - 2.0) / (k as f64 * (df + 2.0)) + 1.0
}

/// log R_f = 1.5·log n + 5R².
pub fn log_r_f(n_rows: usize, radius: f64) -> f64 {
    1.5 * (n_rows as f64).ln() + 5.0 * radius * radius
}

/// log of the theoretical gradient-Lipschitz constant 8·R·R_f.
pub fn l_theory_log(n_rows: usize, radius: f64) -> f64 {
    (8.0 * radius).ln() + log_r_f(n_rows, radius)
}

// ---------------------------------------------------------------------------
// Effective-rank bound
// ---------------------------------------------------------------------------

/// tr(H)/‖H‖ vs rank(A)·(‖B‖_F/‖B‖)·κ²(A) for H = AᵀBA on a constructed
/// pair. A singular A makes the bound infinite (trivially holding).
#[derive(Debug, Clone, Serialize)]
pub struct ErankBound {
    pub erank: f64,
    pub bound: f64,
    pub holds: bool,
}

pub fn erank_bound_pair(a: &Array2<f64>, b: &Array2<f64>) -> Result<ErankBound> {
    let h = a.t().dot(b).dot(a);
    let spec_h = linalg::spectral_norm(&h)?;
    let tr: f64 = (0..h.nrows()).map(|i| h[[i, i]]).sum();
    if spec_h == 0.0 {
        return Err(Error::Degenerate("H = AᵀBA vanished".into()));
    }
    let erank = tr / spec_h;
    let spec_b = linalg::spectral_norm(b)?;
    if spec_b == 0.0 {
        return Err(Error::Degenerate("zero middle matrix".into()));
    }
    let r = linalg::frobenius_norm(b) / spec_b;
    let kappa = linalg::condition_number(a)?;
    let rank_a = linalg::numerical_rank(a, RANK_REL_TOL)? as f64;
    let bound = if kappa.is_finite() {
        rank_a * r * kappa * kappa
    } else {
        f64::INFINITY
    };
    Ok(ErankBound {
        erank,
        bound,
        holds: erank <= bound * (1.0 + 1e-9) || bound.is_infinite(),
    })
}

/// Per-block effective-rank bounds at x, plus the aggregate Hessian ratio
/// against d·√(2d+2)·κ².
#[derive(Debug, Clone, Serialize)]
pub struct ErankBoundReport {
    pub per_block: Vec<ErankBound>,
    pub aggregate_ratio: f64,
    pub aggregate_bound: f64,
    pub holds: bool,
}

pub fn erank_bound_check(problem: &SoftmaxProblem, x: &Array1<f64>) -> Result<ErankBoundReport> {
    let mut per_block = Vec::with_capacity(problem.n_blocks());
    for j in 0..problem.n_blocks() {
        let bj = calculus::hessian_block(problem, j, x)?;
        let entry = match erank_bound_pair(&problem.block(j)?.a, &bj.matrix) {
            Ok(e) => e,
            // A saturated block can make B numerically zero; that bound is
            // vacuous rather than violated.
            Err(Error::Degenerate(_)) => ErankBound {
                erank: 0.0,
                bound: f64::INFINITY,
                holds: true,
            },
            Err(e) => return Err(e),
        };
        per_block.push(entry);
    }
    let h = calculus::hessian_exp_total(problem, x, None)?;
    let spec = linalg::spectral_norm(&h)?;
    let tr: f64 = (0..h.nrows()).map(|i| h[[i, i]]).sum();
    let aggregate_ratio = if spec > 0.0 { tr / spec } else { 0.0 };
    let d = problem.dim() as f64;
    let kappa = problem
        .blocks()
        .iter()
        .map(|blk| linalg::condition_number(&blk.a))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(1.0f64, f64::max);
    let aggregate_bound = d * (2.0 * d + 2.0).sqrt() * kappa * kappa;
    let holds = per_block.iter().all(|e| e.holds)
        && (aggregate_ratio <= aggregate_bound * (1.0 + 1e-9) || aggregate_bound.is_infinite());
    Ok(ErankBoundReport {
        per_block,
        aggregate_ratio,
        aggregate_bound,
        holds,
    })
}

// ---------------------------------------------------------------------------
// Strong convexity and PL
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ConvexityCert {
    /// λ_min of the regularizer Hessian Σ AᵀW²A (exact, x-independent).
    pub mu_reg: f64,
    /// Largest negative curvature of the exp part seen over the samples.
    pub exp_negativity: f64,
    /// mu_reg − exp_negativity: certified ≤ λ_min(∇²L(x)) on every sample.
    pub mu_cert: f64,
    /// Smallest eigenvalue of the full Hessian over the samples.
    pub mu_emp: f64,
}

pub fn strong_convexity_cert(
    problem: &SoftmaxProblem,
    n_samples: usize,
    seed: u64,
) -> Result<ConvexityCert> {
    let mu_reg = linalg::min_eigenvalue(&calculus::hessian_reg_total(problem)?)?;
    let mut rng = rng::stream(seed, StreamKind::Diagnostics, 10);
    let mut exp_negativity = 0.0f64;
    let mut mu_emp = f64::INFINITY;
    for _ in 0..n_samples.max(1) {
        let x = rng::sample_ball(&mut rng, problem.dim(), problem.radius());
        let h_exp = calculus::hessian_exp_total(problem, &x, None)?;
        exp_negativity = exp_negativity.max(-linalg::min_eigenvalue(&h_exp)?);
        let h_full = &h_exp + &calculus::hessian_reg_total(problem)?;
        mu_emp = mu_emp.min(linalg::min_eigenvalue(&h_full)?);
    }
    Ok(ConvexityCert {
        mu_reg,
        exp_negativity,
        mu_cert: mu_reg - exp_negativity,
        mu_emp,
    })
}

/// Worst Polyak–Łojasiewicz ratio ½‖∇L(xₜ)‖²/(L(xₜ)−L*) along a recorded
/// trace. Iterates within 1e-14 of the optimum are skipped (0/0).
#[derive(Debug, Clone, Serialize)]
pub struct PlReport {
    pub min_ratio: f64,
    pub checked: usize,
    pub skipped: usize,
}

pub fn pl_check(trace: &RunTrace) -> Result<PlReport> {
    let mut min_ratio = f64::INFINITY;
    let mut checked = 0;
    let mut skipped = 0;
    for rec in &trace.records {
        let grad_sq = rec.grad_sq.ok_or_else(|| {
            Error::InvalidInput("trace lacks gradient logging; rerun with log_true_grad".into())
        })?;
        if rec.loss_gap <= 1e-14 {
            skipped += 1;
            continue;
        }
        min_ratio = min_ratio.min(0.5 * grad_sq / rec.loss_gap);
        checked += 1;
    }
    if checked == 0 {
        return Err(Error::Degenerate(
            "every iterate sits at the minimizer; PL ratio undefined".into(),
        ));
    }
    Ok(PlReport {
        min_ratio,
        checked,
        skipped,
    })
}

// ---------------------------------------------------------------------------
// Covariance structure
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct CovarianceReport {
    /// tr Σ(x) / (L(x) − L*). Can be negative: the batched loss sums blocks
    /// without rescaling, so the batch gradient's mean is (B/n)·∇L and the
    /// second-moment difference defining Σ is not a covariance in the
    /// B < n case.
    pub alpha_emp: f64,
    pub sigma_trace: f64,
    pub loss_gap: f64,
    /// Worst multiplicative PSD deviation of Σ_{j∈B} vⱼvⱼᵀ from (B/n) times
    /// the full sum over sampled batches.
    pub assumption_eps: f64,
    /// Whether assumption_eps ≤ 1/4.
    pub balanced: bool,
    /// Worst entrywise error of the per-batch outer-product decomposition.
    pub part1_max_rel: f64,
    /// Relative error of E[Σ_{j∈B} vⱼvⱼᵀ] against (B/n)·full sum.
    pub part2_rel_err: f64,
    /// min eig of (B(B−1)/n)·full sum − E[cross terms]; ≥ −1e-8 required.
    pub part3_min_eig: f64,
}

pub fn covariance_trace_check(
    problem: &SoftmaxProblem,
    x: &Array1<f64>,
    batch_size: usize,
    l_star: f64,
    trials: usize,
    seed: u64,
) -> Result<CovarianceReport> {
    if trials < 10_000 {
        return Err(Error::Config(format!(
            "covariance check needs at least 1e4 trials, got {trials}"
        )));
    }
    let n = problem.n_blocks();
    let d = problem.dim();
    if batch_size < 1 || batch_size > n {
        return Err(Error::InvalidInput(format!(
            "batch size {batch_size} out of range 1..={n}"
        )));
    }
    let gap = problem.loss_total(x, None)? - l_star;
    if gap <= 1e-14 {
        return Err(Error::Degenerate(
            "anchor sits at the minimizer; covariance ratio undefined".into(),
        ));
    }

    let sigma = minibatch_covariance(problem, x, batch_size, seed)?;
    let sigma_trace = (0..d).map(|i| sigma[[i, i]]).sum::<f64>();
    let alpha_emp = sigma_trace / gap;

    // Per-block exp-part gradient vectors v_j = A_jᵀ G_j(x); the outer
    // product identities are statements about sums of these.
    let vs: Vec<Array1<f64>> = (0..n)
        .map(|j| calculus::grad_exp_block(problem, j, x))
        .collect::<Result<Vec<_>>>()?;
    let outer = |u: &Array1<f64>, v: &Array1<f64>| {
        Array2::from_shape_fn((d, d), |(i, j)| u[i] * v[j])
    };
    let mut s_full = Array2::<f64>::zeros((d, d));
    for v in &vs {
        s_full += &outer(v, v);
    }

    // Part 1 on sampled batches: ∇L_exp(x;B)∇L_exp(x;B)ᵀ splits into the
    // diagonal sum plus the cross terms, exactly.
    let mut rng_p1 = rng::stream(seed, StreamKind::Diagnostics, 20);
    let mut part1_max_rel = 0.0f64;
    for _ in 0..32 {
        let ids = rng::sample_batch(&mut rng_p1, n, batch_size);
        let gb: Array1<f64> = ids
            .iter()
            .fold(Array1::zeros(d), |acc, &j| acc + &vs[j]);
        let lhs = outer(&gb, &gb);
        let mut rhs = Array2::<f64>::zeros((d, d));
        for &j1 in &ids {
            for &j2 in &ids {
                rhs += &outer(&vs[j1], &vs[j2]);
            }
        }
        let scale = lhs.iter().fold(1e-300f64, |a, v| a.max(v.abs()));
        let dev = lhs
            .iter()
            .zip(rhs.iter())
            .fold(0.0f64, |a, (l, r)| a.max((l - r).abs()));
        part1_max_rel = part1_max_rel.max(dev / scale);
    }

    // Parts 2 and 3 expectations, exact over all C(n, B) subsets when that
    // is tractable (the −1e-8 eigenvalue tolerance presumes no sampling
    // noise), Monte-Carlo otherwise.
    let mut e_diag = Array2::<f64>::zeros((d, d));
    let mut e_cross = Array2::<f64>::zeros((d, d));
    let mut count = 0usize;
    let mut visit = |ids: &[usize]| {
        for &j in ids {
            e_diag += &outer(&vs[j], &vs[j]);
        }
        for &j1 in ids {
            for &j2 in ids {
                if j1 != j2 {
                    e_cross += &outer(&vs[j1], &vs[j2]);
                }
            }
        }
        count += 1;
    };
    if let Some(combos) = crate::estimator::enumerate_batches(n, batch_size, 200_000) {
        for ids in &combos {
            visit(ids);
        }
    } else {
        let mut rng_mc = rng::stream(seed, StreamKind::Diagnostics, 21);
        for _ in 0..trials {
            let ids = rng::sample_batch(&mut rng_mc, n, batch_size);
            visit(&ids);
        }
    }
    e_diag /= count as f64;
    e_cross /= count as f64;

    let bf = batch_size as f64;
    let nf = n as f64;
    let expected_diag = &s_full * (bf / nf);
    let scale2 = expected_diag.iter().fold(1e-300f64, |a, v| a.max(v.abs()));
    let part2_rel_err = e_diag
        .iter()
        .zip(expected_diag.iter())
        .fold(0.0f64, |a, (m, e)| a.max((m - e).abs()))
        / scale2;
    let domination = &(&s_full * (bf * (bf - 1.0) / nf)) - &e_cross;
    let part3_min_eig = linalg::min_eigenvalue(&domination)?;

    // Balanced-distribution deviation: smallest ε with
    // (1−ε)(B/n)S ⪯ S_B ⪯ (1+ε)(B/n)S across sampled batches, via the
    // spectrum of M^{-1/2} S_B M^{-1/2} with M = (B/n)S.
    let assumption_eps = {
        let m = &s_full * (bf / nf);
        match inv_sqrt_psd(&m) {
            Some(m_inv_sqrt) => {
                let mut worst = 0.0f64;
                let mut rng_b = rng::stream(seed, StreamKind::Diagnostics, 22);
                let batches: Vec<Vec<usize>> =
                    match crate::estimator::enumerate_batches(n, batch_size, 5_000) {
                        Some(c) => c,
                        None => (0..256)
                            .map(|_| rng::sample_batch(&mut rng_b, n, batch_size))
                            .collect(),
                    };
                for ids in &batches {
                    let mut s_b = Array2::<f64>::zeros((d, d));
                    for &j in ids {
                        s_b += &outer(&vs[j], &vs[j]);
                    }
                    let w = m_inv_sqrt.dot(&s_b).dot(&m_inv_sqrt);
                    for lam in linalg::sym_eigenvalues(&w)?.iter() {
                        worst = worst.max((lam - 1.0).abs());
                    }
                }
                worst
            }
            None => f64::INFINITY,
        }
    };

    Ok(CovarianceReport {
        alpha_emp,
        sigma_trace,
        loss_gap: gap,
        assumption_eps,
        balanced: assumption_eps <= 0.25,
        part1_max_rel,
        part2_rel_err,
        part3_min_eig,
    })
}

/// M^{-1/2} of a PSD matrix, or None when it is numerically singular.
fn inv_sqrt_psd(m: &Array2<f64>) -> Option<Array2<f64>> {
    use ndarray_linalg::{Eigh, UPLO};
    let sym = 0.5 * (m + &m.t());
    let (vals, vecs) = sym.eigh(UPLO::Lower).ok()?;
    let max = vals.iter().fold(0.0f64, |a, &v| a.max(v));
    if max <= 0.0 || vals.iter().any(|&v| v < 1e-12 * max) {
        return None;
    }
    let d = m.nrows();
    let mut out = Array2::<f64>::zeros((d, d));
    for k in 0..d {
        let scale = 1.0 / vals[k].sqrt();
        for i in 0..d {
            for j in 0..d {
                out[[i, j]] += scale * vecs[[i, k]] * vecs[[j, k]];
            }
        }
    }
    Some(out)
}

// ---------------------------------------------------------------------------
// Iteration bound and smoothness
// ---------------------------------------------------------------------------

/// log of T = γ·max{2l/μ, 2lα/(μ²B)}·log(gap/eps), carried in log space so
/// the theoretical l (log scale ~5R²) never overflows. A non-positive α
/// removes the covariance term; eps ≥ gap collapses the bound to T = 0
/// (−∞ in log space).
pub fn iteration_bound(
    gamma: f64,
    l_log: f64,
    mu: f64,
    alpha: f64,
    batch_size: usize,
    eps: f64,
    l0_gap: f64,
) -> Result<f64> {
    if !(eps > 0.0) || !(l0_gap > 0.0) {
        return Err(Error::InvalidInput(format!(
            "eps and initial gap must be positive (eps = {eps}, gap = {l0_gap})"
        )));
    }
    if !(mu > 0.0) {
        return Err(Error::Diagnostics(format!(
            "iteration bound needs μ > 0, got {mu}"
        )));
    }
    let term1 = 2f64.ln() + l_log - mu.ln();
    let term2 = if alpha > 0.0 {
        2f64.ln() + l_log + alpha.ln() - 2.0 * mu.ln() - (batch_size as f64).ln()
    } else {
        f64::NEG_INFINITY
    };
    let log_factor = (l0_gap / eps).ln().max(0.0);
    if log_factor == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(gamma.ln() + term1.max(term2) + log_factor.ln())
}

/// Empirical gradient-Lipschitz constant over the ball ‖x‖₂ ≤ radius: the
/// max of sampled Hessian spectral norms and of difference ratios taken
/// along each sample's top eigenvector (so the two estimates agree by
/// construction up to curvature drift).
pub fn empirical_smoothness_generic<G, H>(
    grad: G,
    hess: H,
    dim: usize,
    radius: f64,
    n_samples: usize,
    seed: u64,
) -> Result<f64>
where
    G: Fn(&Array1<f64>) -> Result<Array1<f64>>,
    H: Fn(&Array1<f64>) -> Result<Array2<f64>>,
{
    use ndarray_linalg::{Eigh, UPLO};
    let mut rng = rng::stream(seed, StreamKind::Diagnostics, 30);
    let mut l_emp = 0.0f64;
    for _ in 0..n_samples.max(1) {
        let x = rng::sample_ball(&mut rng, dim, radius);
        let h = hess(&x)?;
        let sym = 0.5 * (&h + &h.t());
        let (vals, vecs) = sym.eigh(UPLO::Lower)?;
        let mut top = 0usize;
        for (i, v) in vals.iter().enumerate() {
            if v.abs() > vals[top].abs() {
                top = i;
            }
        }
        l_emp = l_emp.max(vals[top].abs());
        // Difference quotient along the top eigen-direction.
        let v = vecs.column(top).to_owned();
        let t = 1e-4 * (1.0 + radius);
        let y = &x + &(&v * t);
        let gx = grad(&x)?;
        let gy = grad(&y)?;
        let ratio = (&gy - &gx).iter().map(|u| u * u).sum::<f64>().sqrt() / t;
        l_emp = l_emp.max(ratio);
    }
    Ok(l_emp)
}

pub fn empirical_smoothness(
    problem: &SoftmaxProblem,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    if n_samples < 100 {
        return Err(Error::Config(format!(
            "smoothness estimate needs at least 100 samples, got {n_samples}"
        )));
    }
    empirical_smoothness_generic(
        |x| calculus::grad_total(problem, x, None),
        |x| calculus::hessian_total(problem, x),
        problem.dim(),
        problem.radius(),
        n_samples,
        seed,
    )
}

/// Worst log-partition over sampled ‖x‖₂ ≤ R against the lower bound −R².
#[derive(Debug, Clone, Serialize)]
pub struct BetaReport {
    pub min_log_partition: f64,
    pub log_bound: f64,
    pub holds: bool,
}

pub fn beta_check(problem: &SoftmaxProblem, n_samples: usize, seed: u64) -> Result<BetaReport> {
    let r = problem.radius();
    let log_bound = -r * r;
    let mut rng = rng::stream(seed, StreamKind::Diagnostics, 40);
    let mut min_log_partition = f64::INFINITY;
    for _ in 0..n_samples.max(1) {
        let x = rng::sample_ball(&mut rng, problem.dim(), r);
        for j in 0..problem.n_blocks() {
            let lp = problem.softmax_block(j, &x)?.log_partition;
            min_log_partition = min_log_partition.min(lp);
        }
    }
    Ok(BetaReport {
        min_log_partition,
        log_bound,
        holds: min_log_partition >= log_bound - 1e-12,
    })
}

// ---------------------------------------------------------------------------
// Matrix-algebra test kit
// ---------------------------------------------------------------------------

/// Verifies the basic norm inequalities on a random matrix pair; returns the
/// worst violation (negative slack) found, which should be ≥ −1e-10·scale.
pub fn norm_inequality_kit(n: usize, d: usize, trials: usize, seed: u64) -> Result<f64> {
    use rand_distr::StandardNormal;
    let mut rng = rng::stream(seed, StreamKind::Diagnostics, 50);
    let mut worst: f64 = f64::INFINITY;
    let mut upd = |slack: f64| {
        if slack < worst {
            worst = slack;
        }
    };
    for _ in 0..trials {
        let a = Array2::from_shape_fn((n, d), |_| rand::Rng::sample::<f64, _>(&mut rng, StandardNormal));
        let b = Array2::from_shape_fn((n, d), |_| rand::Rng::sample::<f64, _>(&mut rng, StandardNormal));
        let x = Array1::from_shape_fn(d, |_| rand::Rng::sample::<f64, _>(&mut rng, StandardNormal));
        let y = Array1::from_shape_fn(d, |_| rand::Rng::sample::<f64, _>(&mut rng, StandardNormal));
        let scalar: f64 = rand::Rng::random_range(&mut rng, -3.0..3.0);

        let na = linalg::spectral_norm(&a)?;
        let nb = linalg::spectral_norm(&b)?;

        // ‖A‖_F ≤ √rank(A)·‖A‖
        let rank = linalg::numerical_rank(&a, RANK_REL_TOL)? as f64;
        upd(rank.sqrt() * na - linalg::frobenius_norm(&a));
        // rank(A+B) ≤ rank(A) + rank(B) on a constructed low-rank pair
        let u = Array2::from_shape_fn((n, 1), |_| rand::Rng::sample::<f64, _>(&mut rng, StandardNormal));
        let v = Array2::from_shape_fn((1, d), |_| rand::Rng::sample::<f64, _>(&mut rng, StandardNormal));
        let w = Array2::from_shape_fn((n, 1), |_| rand::Rng::sample::<f64, _>(&mut rng, StandardNormal));
        let z = Array2::from_shape_fn((1, d), |_| rand::Rng::sample::<f64, _>(&mut rng, StandardNormal));
        let low = &u.dot(&v) + &w.dot(&z);
        upd(2.0 - linalg::numerical_rank(&low, RANK_REL_TOL)? as f64);
        // ‖Aᵀ‖ = ‖A‖
        upd(1e-10 - (linalg::spectral_norm(&a.t().to_owned())? - na).abs());
        // ‖A‖ ≥ ‖B‖ − ‖A−B‖
        upd(na - (nb - linalg::spectral_norm(&(&a - &b))?));
        // ‖A+B‖ ≤ ‖A‖ + ‖B‖
        upd(na + nb - linalg::spectral_norm(&(&a + &b))?);
        // ‖A·Bᵀ‖ ≤ ‖A‖·‖Bᵀ‖
        upd(na * nb - linalg::spectral_norm(&a.dot(&b.t()))?);
        // A ⪯ s·B (PSD) ⇒ ‖A‖ ≤ s·‖B‖, with A = c·s·B for a contraction c
        let psd = b.t().dot(&b);
        let s: f64 = rand::Rng::random_range(&mut rng, 0.5..3.0);
        let c: f64 = rand::Rng::random_range(&mut rng, 0.0..1.0);
        let scaled = &psd * (c * s);
        upd(s * linalg::spectral_norm(&psd)? - linalg::spectral_norm(&scaled)?);
        // ‖a·A‖ ≤ |a|·‖A‖
        upd(scalar.abs() * na - linalg::spectral_norm(&(&a * scalar))? + 1e-12);
        // ‖Ax‖ ≤ ‖A‖·‖x‖
        let xnorm = x.iter().map(|t| t * t).sum::<f64>().sqrt();
        upd(na * xnorm - a.dot(&x).iter().map(|t| t * t).sum::<f64>().sqrt());
        // ‖xyᵀ‖ ≤ ‖x‖·‖y‖
        let ynorm = y.iter().map(|t| t * t).sum::<f64>().sqrt();
        let xy = Array2::from_shape_fn((d, d), |(i, j)| x[i] * y[j]);
        upd(xnorm * ynorm - linalg::spectral_norm(&xy)? + 1e-12);
    }
    Ok(worst)
}

/// PSD dominations over a random vector family: returns the most negative
/// eigenvalue seen across the three checks (should be ≥ −1e-10·scale).
pub fn psd_domination_kit(dim: usize, n_vectors: usize, seed: u64) -> Result<f64> {
    use rand_distr::StandardNormal;
    let mut rng = rng::stream(seed, StreamKind::Diagnostics, 51);
    let vs: Vec<Array1<f64>> = (0..n_vectors)
        .map(|_| Array1::from_shape_fn(dim, |_| rand::Rng::sample(&mut rng, StandardNormal)))
        .collect();
    let outer = |u: &Array1<f64>, v: &Array1<f64>| {
        Array2::from_shape_fn((dim, dim), |(i, j)| u[i] * v[j])
    };
    let mut worst = f64::INFINITY;

    // xyᵀ + yxᵀ ⪯ xxᵀ + yyᵀ for every pair.
    for i in 0..n_vectors {
        for j in i + 1..n_vectors {
            let lhs = &outer(&vs[i], &vs[j]) + &outer(&vs[j], &vs[i]);
            let rhs = &outer(&vs[i], &vs[i]) + &outer(&vs[j], &vs[j]);
            worst = worst.min(linalg::min_eigenvalue(&(&rhs - &lhs))?);
        }
    }
    // Σ_{i<j} (aᵢaⱼᵀ + aⱼaᵢᵀ) ⪯ (n−1)·Σ aᵢaᵢᵀ.
    let mut cross = Array2::<f64>::zeros((dim, dim));
    let mut diag = Array2::<f64>::zeros((dim, dim));
    for i in 0..n_vectors {
        diag += &outer(&vs[i], &vs[i]);
        for j in i + 1..n_vectors {
            cross += &outer(&vs[i], &vs[j]);
            cross += &outer(&vs[j], &vs[i]);
        }
    }
    let rhs2 = &diag * (n_vectors as f64 - 1.0);
    worst = worst.min(linalg::min_eigenvalue(&(&rhs2 - &cross))?);
    // Σ_{i,j} aᵢaⱼᵀ ⪯ n·Σ aᵢaᵢᵀ.
    let all = &cross + &diag;
    let rhs3 = &diag * n_vectors as f64;
    worst = worst.min(linalg::min_eigenvalue(&(&rhs3 - &all))?);
    Ok(worst)
}

// ---------------------------------------------------------------------------
// The assembled report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagConfig {
    /// Points sampled from the ball for "for all x" checks.
    #[serde(default = "default_x_samples")]
    pub x_samples: usize,
    /// Monte-Carlo trials for moment and covariance checks.
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// k-SPSA count used for the γ factor.
    #[serde(default = "default_gamma_k")]
    pub k: usize,
    /// Batch size for the covariance checks (defaults to ⌈n/2⌉ at run time).
    #[serde(default)]
    pub batch_size: Option<usize>,
    /// Target accuracy used in the iteration bound.
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_x_samples() -> usize {
    50
}

fn default_trials() -> usize {
    10_000
}

fn default_gamma_k() -> usize {
    1
}

fn default_eps() -> f64 {
    1e-4
}

impl Default for DiagConfig {
    fn default() -> Self {
        Self {
            x_samples: default_x_samples(),
            trials: default_trials(),
            k: default_gamma_k(),
            batch_size: None,
            eps: default_eps(),
            seed: 0,
        }
    }
}

impl DiagConfig {
    pub fn validate(&self) -> Result<()> {
        if self.x_samples == 0 {
            return Err(Error::Config("x_samples must be positive".into()));
        }
        if self.trials < 10_000 {
            return Err(Error::Config(format!(
                "trials below the 1e4 minimum: {}",
                self.trials
            )));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be positive".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("eps must be positive".into()));
        }
        Ok(())
    }
}

/// Every constant of the analysis evaluated on one instance. Quantities at
/// exp(R²) scale are stored as natural logs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    /// Largest measured block spectral norm.
    #[serde(rename = "R")]
    pub r: f64,
    /// log R_f = 1.5·log n_rows + 5R².
    #[serde(rename = "R_f")]
    pub r_f_log: f64,
    pub l_theory_log: f64,
    pub l_emp: f64,
    pub mu_cert: f64,
    pub mu_emp: f64,
    /// −R²: log of the certified partition lower bound.
    pub beta_log: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub alpha_emp: f64,
    pub srank_max: f64,
    #[serde(rename = "erank_H")]
    pub erank_h: f64,
    #[serde(rename = "T_theory_log")]
    pub t_theory_log: f64,
    #[serde(rename = "T_observed")]
    pub t_observed: u64,
}

impl DiagnosticsReport {
    /// The report invariants: finite logs, γ ≥ 1, mu_cert ≤ mu_emp + 1e-8.
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.r,
            self.r_f_log,
            self.l_theory_log,
            self.l_emp,
            self.mu_cert,
            self.mu_emp,
            self.beta_log,
            self.kappa,
            self.gamma,
            self.alpha_emp,
            self.srank_max,
            self.erank_h,
            self.t_theory_log,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diagnostics("non-finite report field".into()));
        }
        if self.gamma < 1.0 {
            return Err(Error::Diagnostics(format!("gamma {} < 1", self.gamma)));
        }
        if self.mu_cert > self.mu_emp + 1e-8 {
            return Err(Error::Diagnostics(format!(
                "mu_cert {} exceeds mu_emp {}",
                self.mu_cert, self.mu_emp
            )));
        }
        Ok(())
    }
}

/// Runs the full constants pass on an instance.
pub fn diagnose(problem: &SoftmaxProblem, cfg: &DiagConfig) -> Result<DiagnosticsReport> {
    cfg.validate()?;
    let n = problem.n_blocks();
    let d = problem.dim();

    let mut r_measured = 0.0f64;
    let mut kappa = 1.0f64;
    for blk in problem.blocks() {
        r_measured = r_measured.max(linalg::spectral_norm(&blk.a)?);
        let k = linalg::condition_number(&blk.a)?;
        if k.is_finite() {
            kappa = kappa.max(k);
        } else {
            return Err(Error::Diagnostics("singular block matrix; κ undefined".into()));
        }
    }

    let cert = strong_convexity_cert(problem, cfg.x_samples, cfg.seed)?;
    let l_emp = empirical_smoothness(problem, cfg.x_samples.max(100), cfg.seed)?;

    // Ranks over sampled points.
    let mut rng = rng::stream(cfg.seed, StreamKind::Diagnostics, 60);
    let mut srank_max = 0.0f64;
    let mut erank_h = 0.0f64;
    for _ in 0..cfg.x_samples {
        let x = rng::sample_ball(&mut rng, d, problem.radius());
        for j in 0..n {
            let bj = calculus::hessian_block(problem, j, &x)?;
            if let Ok(sr) = stable_rank(&bj.matrix) {
                srank_max = srank_max.max(sr);
            }
        }
        let h = calculus::hessian_total(problem, &x)?;
        let tr: f64 = (0..d).map(|i| h[[i, i]]).sum();
        let spec = linalg::spectral_norm(&h)?;
        if tr > 0.0 && spec > 0.0 {
            erank_h = erank_h.max(tr / spec);
        }
    }
    if srank_max == 0.0 {
        srank_max = 1.0;
    }
    if erank_h == 0.0 {
        erank_h = 1.0;
    }

    // Reference minimum, then the covariance anchor.
    let x0 = Array1::<f64>::zeros(d);
    let oracle = l_star_oracle(problem, &x0, 1.0 / l_emp.max(1e-12), 1_000_000, 1e-12)?;
    let mut anchor_rng = rng::stream(cfg.seed, StreamKind::Diagnostics, 61);
    let mut anchor = rng::sample_ball(&mut anchor_rng, d, problem.radius().min(1.0));
    for _ in 0..16 {
        if problem.loss_total(&anchor, None)? - oracle.l_star > 1e-8 {
            break;
        }
        anchor = rng::sample_ball(&mut anchor_rng, d, problem.radius().min(1.0));
    }
    let batch_size = cfg.batch_size.unwrap_or(n.div_ceil(2)).clamp(1, n);
    let cov = covariance_trace_check(
        problem,
        &anchor,
        batch_size,
        oracle.l_star,
        cfg.trials,
        cfg.seed,
    )?;

    let gamma = gamma_factor(d, cfg.k, kappa);
    let mu = if cert.mu_cert > 0.0 {
        cert.mu_cert
    } else if cert.mu_emp > 0.0 {
        cert.mu_emp
    } else {
        return Err(Error::Diagnostics(
            "instance shows no positive curvature; iteration bound undefined".into(),
        ));
    };
    let gap0 = problem.loss_total(&x0, None)? - oracle.l_star;
    let t_theory_log = iteration_bound(
        gamma,
        l_theory_log(problem.n_rows(), r_measured),
        mu,
        cov.alpha_emp,
        batch_size,
        cfg.eps,
        gap0.max(cfg.eps * (1.0 + 1e-6)),
    )?;

    let report = DiagnosticsReport {
        r: r_measured,
        r_f_log: log_r_f(problem.n_rows(), r_measured),
        l_theory_log: l_theory_log(problem.n_rows(), r_measured),
        l_emp,
        mu_cert: cert.mu_cert,
        mu_emp: cert.mu_emp,
        beta_log: -r_measured * r_measured,
        kappa,
        gamma,
        alpha_emp: cov.alpha_emp,
        srank_max,
        erank_h,
        t_theory_log,
        t_observed: 0,
    };
    report.validate()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_instance;
    use crate::model::Block;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn stable_rank_examples() {
        assert_abs_diff_eq!(stable_rank(&Array2::eye(3)).unwrap(), 3.0, epsilon = 1e-12);
        let x = array![1.0, 2.0, -1.0];
        let rank1 = Array2::from_shape_fn((3, 3), |(i, j)| x[i] * x[j]);
        assert_abs_diff_eq!(stable_rank(&rank1).unwrap(), 1.0, epsilon = 1e-10);
        let m = Array2::from_diag(&array![2.0, 1.0, 1.0]);
        assert_abs_diff_eq!(stable_rank(&m).unwrap(), 1.5, epsilon = 1e-12);
        assert!(matches!(
            stable_rank(&Array2::zeros((2, 2))),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn effective_rank_examples() {
        assert_abs_diff_eq!(effective_rank(&Array2::eye(4)).unwrap(), 4.0, epsilon = 1e-12);
        let m = Array2::from_diag(&array![2.0, 1.0, 1.0]);
        assert_abs_diff_eq!(effective_rank(&m).unwrap(), 2.0, epsilon = 1e-12);
        let x = array![0.5, -1.5];
        let rank1 = Array2::from_shape_fn((2, 2), |(i, j)| x[i] * x[j]);
        assert_abs_diff_eq!(effective_rank(&rank1).unwrap(), 1.0, epsilon = 1e-10);
        let indefinite = Array2::from_diag(&array![1.0, -0.5]);
        assert!(effective_rank(&indefinite).is_err());
    }

    #[test]
    fn gamma_factor_examples() {
        // d=1, k=1, κ=1: (√4 + 1 − 2)/3 + 1 = 4/3.
        assert_abs_diff_eq!(gamma_factor(1, 1, 1.0), 4.0 / 3.0, epsilon = 1e-12);
        // d=2, k=1, κ=1: 4√6/4 + 1 = 1 + √6.
        assert_abs_diff_eq!(gamma_factor(2, 1, 1.0), 1.0 + 6f64.sqrt(), epsilon = 1e-12);
        // k → ∞ drives the fraction to 0.
        assert!((gamma_factor(4, 1_000_000_000, 2.0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn gamma_factor_monotonicity_grid() {
        for d in 1..8usize {
            for k in 1..6usize {
                for kap in [1.0, 1.5, 2.0, 4.0] {
                    let g = gamma_factor(d, k, kap);
                    assert!(g >= 1.0);
                    assert!(gamma_factor(d, k + 1, kap) <= g + 1e-12, "decreasing in k");
                    assert!(gamma_factor(d + 1, k, kap) >= g - 1e-12, "increasing in d");
                    assert!(gamma_factor(d, k, kap + 0.5) >= g - 1e-12, "increasing in κ");
                }
            }
        }
    }

    #[test]
    fn erank_bound_constructed_pairs() {
        // Orthogonal A (κ = 1), B = I: erank(H) = d, bound d·√(2d+2) ≥ d.
        let d = 4;
        let a = Array2::eye(d);
        let b = Array2::eye(d);
        let e = erank_bound_pair(&a, &b).unwrap();
        assert_abs_diff_eq!(e.erank, d as f64, epsilon = 1e-10);
        assert!(e.holds);

        // Rank-1 PSD middle matrix: erank(H) = 1.
        let v = array![1.0, 0.5, -0.5, 2.0];
        let rank1 = Array2::from_shape_fn((d, d), |(i, j)| v[i] * v[j]);
        let e = erank_bound_pair(&a, &rank1).unwrap();
        assert_abs_diff_eq!(e.erank, 1.0, epsilon = 1e-9);
        assert!(e.holds);
    }

    #[test]
    fn erank_bound_random_pairs_always_hold() {
        use rand_distr::StandardNormal;
        let mut rng = rng::stream(3, StreamKind::Diagnostics, 0);
        for _ in 0..50 {
            let n = 3 + (rand::Rng::random_range(&mut rng, 0..4usize));
            let d = 2 + (rand::Rng::random_range(&mut rng, 0..4usize));
            let a = Array2::from_shape_fn((n, d), |_| rand::Rng::sample(&mut rng, StandardNormal));
            let c = Array2::from_shape_fn((n, n), |_| rand::Rng::sample(&mut rng, StandardNormal));
            let b = c.t().dot(&c); // PSD middle matrix
            let e = erank_bound_pair(&a, &b).unwrap();
            assert!(e.holds, "erank {} vs bound {}", e.erank, e.bound);
        }
    }

    #[test]
    fn erank_bound_on_instance_blocks() {
        let (p, x) = random_instance(17, 3, 5, 4, 1.5);
        let report = erank_bound_check(&p, &x).unwrap();
        assert!(report.holds);
        assert!(report.aggregate_ratio <= report.aggregate_bound);
    }

    #[test]
    fn hessian_factor_rank_bounds_on_samples() {
        // rank(B_j) and srank(B_j) stay below 2·n_rows + 2.
        for seed in 0..20u64 {
            let (p, x) = random_instance(seed, 2, 5, 3, 2.0);
            let cap = 2.0 * p.n_rows() as f64 + 2.0;
            for j in 0..p.n_blocks() {
                let bj = calculus::hessian_block(&p, j, &x).unwrap();
                assert!((numerical_rank(&bj.matrix).unwrap() as f64) <= cap);
                if let Ok(sr) = stable_rank(&bj.matrix) {
                    assert!(sr <= cap + 1e-9, "srank {sr} vs cap {cap}");
                }
            }
        }
    }

    #[test]
    fn strong_convexity_cert_reg_identity_block() {
        // Single block A = I with unit weights: the regularizer Hessian is
        // exactly I, so the certified floor from the regularizer part is 1.
        let p = SoftmaxProblem::new(
            vec![Block {
                a: Array2::eye(3),
                b: array![0.3, 0.3, 0.4],
            }],
            array![1.0, 1.0, 1.0],
            1.0,
        )
        .unwrap();
        let cert = strong_convexity_cert(&p, 30, 0).unwrap();
        assert_abs_diff_eq!(cert.mu_reg, 1.0, epsilon = 1e-10);
        assert!(cert.mu_emp >= cert.mu_cert - 1e-8);
    }

    #[test]
    fn strong_convexity_cert_zero_weights() {
        // Zero weights and zero matrices: no curvature anywhere, mu_cert 0.
        let p = SoftmaxProblem::new(
            vec![Block {
                a: Array2::zeros((3, 2)),
                b: array![0.2, 0.3, 0.5],
            }],
            Array1::zeros(3),
            1.0,
        )
        .unwrap();
        let cert = strong_convexity_cert(&p, 10, 0).unwrap();
        assert_abs_diff_eq!(cert.mu_reg, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cert.mu_cert, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn cert_lower_bounds_sampled_hessians() {
        for seed in [2u64, 5, 11] {
            let (p, _) = random_instance(seed, 4, 5, 3, 2.0);
            let cert = strong_convexity_cert(&p, 40, seed).unwrap();
            assert!(
                cert.mu_emp >= cert.mu_cert - 1e-8,
                "seed {seed}: mu_emp {} < mu_cert {}",
                cert.mu_emp,
                cert.mu_cert
            );
        }
    }

    #[test]
    fn pl_ratio_is_mu_on_quadratic() {
        use crate::objective::Quadratic;
        use crate::optimizer::{run, Eta, Mode, OptConfig};
        let obj = Quadratic { dim: 3 };
        let cfg = OptConfig {
            eta: Eta::Fixed(0.3),
            batch_size: 1,
            max_iters: 40,
            target_gap: 1e-9,
            spsa: crate::estimator::SpsaConfig::new(1),
            mode: Mode::FirstOrder,
            log_true_grad: true,
        };
        let trace = run(&obj, &array![1.0, -0.5, 2.0], &cfg, 0.0).unwrap();
        let pl = pl_check(&trace).unwrap();
        // 0.5‖x‖² is 1-strongly convex and the ratio is exactly 1.
        assert_abs_diff_eq!(pl.min_ratio, 1.0, epsilon = 1e-9);
        assert_eq!(pl.skipped + pl.checked, trace.records.len());
    }

    #[test]
    fn pl_check_skips_minimizer() {
        use crate::objective::Quadratic;
        use crate::optimizer::{run, Eta, Mode, OptConfig};
        let obj = Quadratic { dim: 2 };
        let cfg = OptConfig {
            eta: Eta::Fixed(1.0),
            batch_size: 1,
            max_iters: 5,
            target_gap: 1e-30,
            spsa: crate::estimator::SpsaConfig::new(1),
            mode: Mode::FirstOrder,
            log_true_grad: true,
        };
        // Unit step jumps straight to the minimizer; later records sit at
        // gap 0 and must be skipped, not divided by.
        let trace = run(&obj, &array![2.0, 1.0], &cfg, 0.0).unwrap();
        let pl = pl_check(&trace).unwrap();
        assert!(pl.skipped >= 1);
        assert!(pl.min_ratio.is_finite());
    }

    #[test]
    fn covariance_full_batch_alpha_zero() {
        let (p, x) = random_instance(4, 4, 4, 3, 1.2);
        let report = covariance_trace_check(&p, &x, p.n_blocks(), -1.0, 10_000, 0).unwrap();
        assert_eq!(report.sigma_trace, 0.0, "full batch has no sampling variance");
        assert_eq!(report.alpha_emp, 0.0);
    }

    #[test]
    fn covariance_single_block_sigma_zero() {
        let (p, x) = random_instance(6, 1, 4, 3, 1.2);
        let report = covariance_trace_check(&p, &x, 1, -1.0, 10_000, 0).unwrap();
        assert_eq!(report.sigma_trace, 0.0);
    }

    #[test]
    fn covariance_identities_on_random_instance() {
        let (p, x) = random_instance(9, 8, 5, 4, 1.5);
        let report = covariance_trace_check(&p, &x, 4, -1.0, 10_000, 7).unwrap();
        assert!(report.part1_max_rel < 1e-10, "decomposition is algebraic");
        assert!(report.part2_rel_err < 0.02, "got {}", report.part2_rel_err);
        assert!(
            report.part3_min_eig >= -1e-8,
            "domination min eig {}",
            report.part3_min_eig
        );
        assert!(report.alpha_emp.is_finite());
        assert!(report.assumption_eps.is_finite());
    }

    #[test]
    fn covariance_guards() {
        let (p, x) = random_instance(10, 4, 4, 3, 1.0);
        assert!(matches!(
            covariance_trace_check(&p, &x, 2, -1.0, 100, 0),
            Err(Error::Config(_))
        ));
        // Anchor at the minimizer: gap collapses.
        let gap_here = p.loss_total(&x, None).unwrap();
        assert!(matches!(
            covariance_trace_check(&p, &x, 2, gap_here, 10_000, 0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn iteration_bound_examples() {
        // γ=2, l=2, μ=1, α=1, B=1, gap/ε = e: T = 2·4·1 = 8.
        let t = iteration_bound(2.0, 2f64.ln(), 1.0, 1.0, 1, 1.0, std::f64::consts::E).unwrap();
        assert_abs_diff_eq!(t, 8f64.ln(), epsilon = 1e-12);
        // eps = gap ⇒ T = 0.
        let t0 = iteration_bound(2.0, 2f64.ln(), 1.0, 1.0, 1, 0.5, 0.5).unwrap();
        assert_eq!(t0, f64::NEG_INFINITY);
        // Guards.
        assert!(iteration_bound(2.0, 0.0, 1.0, 1.0, 1, 0.0, 1.0).is_err());
        assert!(iteration_bound(2.0, 0.0, 1.0, 1.0, 1, 1.0, -1.0).is_err());
    }

    #[test]
    fn theory_constant_bookkeeping() {
        // R = 4, n_rows = 2: log(8R) + 1.5·log 2 + 5·16.
        let t = l_theory_log(2, 4.0);
        assert!((t - 84.5055).abs() < 1e-3, "log l_theory = {t}");
        // R = 2: the β bound in log space is −4.
        let (p, _) = random_instance(3, 2, 4, 3, 2.0);
        let beta = beta_check(&p, 100, 0).unwrap();
        assert_abs_diff_eq!(beta.log_bound, -4.0, epsilon = 1e-12);
        assert!(beta.holds);
    }

    #[test]
    fn beta_check_zero_matrix() {
        let p = SoftmaxProblem::new(
            vec![Block {
                a: Array2::zeros((3, 2)),
                b: array![0.1, 0.1, 0.8],
            }],
            Array1::zeros(3),
            1.5,
        )
        .unwrap();
        let report = beta_check(&p, 10, 0).unwrap();
        // Partition is exactly n_rows for a zero matrix.
        assert_abs_diff_eq!(report.min_log_partition, 3f64.ln(), epsilon = 1e-12);
        assert!(report.holds);
    }

    #[test]
    fn beta_holds_on_random_instances() {
        for seed in 0..20u64 {
            let (p, _) = random_instance(seed, 3, 4, 3, 2.5);
            assert!(beta_check(&p, 5, seed).unwrap().holds);
        }
    }

    #[test]
    fn empirical_smoothness_quadratic_is_one() {
        let l = empirical_smoothness_generic(
            |x| Ok(x.clone()),
            |x| Ok(Array2::eye(x.len())),
            3,
            2.0,
            120,
            0,
        )
        .unwrap();
        assert_abs_diff_eq!(l, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn empirical_smoothness_tracks_hessian_max_and_theory_bound() {
        let (p, _) = random_instance(12, 3, 5, 4, 2.0);
        let l_emp = empirical_smoothness(&p, 150, 3).unwrap();
        // Pure Hessian-max pass over the same sample stream.
        let mut rng = rng::stream(3, StreamKind::Diagnostics, 30);
        let mut h_max = 0.0f64;
        for _ in 0..150 {
            let x = rng::sample_ball(&mut rng, p.dim(), p.radius());
            h_max = h_max.max(
                linalg::max_abs_eigenvalue(&calculus::hessian_total(&p, &x).unwrap()).unwrap(),
            );
        }
        assert!((l_emp / h_max - 1.0).abs() < 0.05, "l_emp {l_emp} vs eig max {h_max}");
        assert!(l_emp.ln() <= l_theory_log(p.n_rows(), p.radius()));
        assert!(empirical_smoothness(&p, 10, 0).is_err(), "sample floor enforced");
    }

    #[test]
    fn matrix_fact_kits_hold() {
        let worst = norm_inequality_kit(5, 4, 40, 0).unwrap();
        assert!(worst >= -1e-10, "norm inequality violated by {worst}");
        let psd_worst = psd_domination_kit(4, 6, 0).unwrap();
        assert!(psd_worst >= -1e-10, "PSD domination violated by {psd_worst}");
    }

    #[test]
    fn diagnose_produces_valid_report() {
        let (p, _) = random_instance(8, 4, 5, 3, 1.5);
        let cfg = DiagConfig::default();
        let report = diagnose(&p, &cfg).unwrap();
        report.validate().unwrap();
        assert_abs_diff_eq!(
            report.gamma,
            gamma_factor(p.dim(), cfg.k, report.kappa),
            epsilon = 1e-12
        );
        assert!(report.l_emp.ln() <= report.l_theory_log);
        // Flat JSON with the documented field names.
        let json = serde_json::to_value(&report).unwrap();
        let obj = json.as_object().unwrap();
        for key in [
            "R",
            "R_f",
            "l_theory_log",
            "l_emp",
            "mu_cert",
            "mu_emp",
            "beta_log",
            "kappa",
            "gamma",
            "alpha_emp",
            "srank_max",
            "erank_H",
            "T_theory_log",
            "T_observed",
        ] {
            assert!(obj.contains_key(key), "missing report field {key}");
        }
        assert_eq!(obj.len(), 14);
    }
}
