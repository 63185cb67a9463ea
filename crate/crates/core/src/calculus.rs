//! Analytic gradients and Hessians of the softmax loss, plus the independent
//! finite-difference oracles that every analytic path is checked against.
//!
//! With f = softmax(A_j x), c = f − b_j, the chain rule through the softmax
//! Jacobian J = diag(f) − ffᵀ gives the gradient middle factor
//!
//! ```text
//! G_j  = J c = f∘c − (cᵀf)·f = −G_{j,1} + G_{j,2}
//! G_{j,1} = (cᵀf)·f,    G_{j,2} = f∘c
//! ```
//!
//! so ∇L_exp,j = A_jᵀ G_j. Differentiating G_j once more yields the
//! symmetric n×n Hessian factor
//!
//! ```text
//! B_j = ⟨3f−2b, f⟩·ffᵀ − q fᵀ − f qᵀ − ⟨f−b, f⟩·diag(f) + diag(q)
//!       with q = (2f−b)∘f
//! ```
//!
//! and ∇²L_exp = Σ_j A_jᵀ B_j A_j. B_j splits into a rank-constrained part
//! (the three outer products, rank ≤ 3) and a diagonal part, which is what
//! keeps its stable rank small.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::model::{Batch, SoftmaxProblem};

/// The gradient middle factor and its two summands.
#[derive(Debug, Clone)]
pub struct GradientParts {
    /// G_{j,1} = (cᵀf)·f.
    pub g1: Array1<f64>,
    /// G_{j,2} = f∘c.
    pub g2: Array1<f64>,
    /// G_j = −g1 + g2.
    pub g: Array1<f64>,
}

/// The Hessian middle factor B_j with its five summands kept separately:
/// parts 0–2 are the rank-constrained outer products, parts 3–4 the
/// diagonal matrices.
#[derive(Debug, Clone)]
pub struct HessianBlock {
    pub matrix: Array2<f64>,
    pub parts: [Array2<f64>; 5],
}

impl HessianBlock {
    /// Sum of the rank-constrained summands (rank ≤ 3).
    pub fn rank_part(&self) -> Array2<f64> {
        &(&self.parts[0] + &self.parts[1]) + &self.parts[2]
    }

    /// Sum of the diagonal summands.
    pub fn diag_part(&self) -> Array2<f64> {
        &self.parts[3] + &self.parts[4]
    }
}

fn outer(u: &Array1<f64>, v: &Array1<f64>) -> Array2<f64> {
    let n = u.len();
    Array2::from_shape_fn((n, n), |(i, j)| u[i] * v[j])
}

/// G_{j,1}, G_{j,2} and G_j at x.
pub fn grad_parts_block(
    problem: &SoftmaxProblem,
    j: usize,
    x: &Array1<f64>,
) -> Result<GradientParts> {
    let f = problem.softmax_block(j, x)?.probs;
    let c = &f - &problem.block(j)?.b;
    let cf: f64 = c.dot(&f);
    let g1 = &f * cf;
    let g2 = &f * &c;
    let g = &g2 - &g1;
    Ok(GradientParts { g1, g2, g })
}

/// ∇L_exp,j(x) = A_jᵀ G_j(x).
pub fn grad_exp_block(problem: &SoftmaxProblem, j: usize, x: &Array1<f64>) -> Result<Array1<f64>> {
    let parts = grad_parts_block(problem, j, x)?;
    Ok(problem.block(j)?.a.t().dot(&parts.g))
}

/// ∇L_reg,j(x) = A_jᵀ W² A_j x.
pub fn grad_reg_block(problem: &SoftmaxProblem, j: usize, x: &Array1<f64>) -> Result<Array1<f64>> {
    let a = &problem.block(j)?.a;
    let u = a.dot(x);
    let w2u: Array1<f64> = problem
        .weights()
        .iter()
        .zip(u.iter())
        .map(|(w, ui)| w * w * ui)
        .collect();
    Ok(a.t().dot(&w2u))
}

/// Batched gradient matching `loss_total`'s convention (regularizer included
/// per selected block).
pub fn grad_total(problem: &SoftmaxProblem, x: &Array1<f64>, batch: Batch) -> Result<Array1<f64>> {
    grad_total_with(problem, x, batch, true)
}

/// Σ_j ∇L_exp,j over the batch, never including the regularizer.
pub fn grad_exp_total(
    problem: &SoftmaxProblem,
    x: &Array1<f64>,
    batch: Batch,
) -> Result<Array1<f64>> {
    let ids = problem.resolve_batch(batch)?;
    let mut g = Array1::<f64>::zeros(problem.dim());
    for j in ids {
        g += &grad_exp_block(problem, j, x)?;
    }
    Ok(g)
}

/// Batched gradient with an explicit regularizer convention, matching
/// `loss_total_with`.
pub fn grad_total_with(
    problem: &SoftmaxProblem,
    x: &Array1<f64>,
    batch: Batch,
    reg_in_batch: bool,
) -> Result<Array1<f64>> {
    let include_reg = batch.is_none() || reg_in_batch;
    let ids = problem.resolve_batch(batch)?;
    let mut g = Array1::<f64>::zeros(problem.dim());
    for j in ids {
        g += &grad_exp_block(problem, j, x)?;
        if include_reg {
            g += &grad_reg_block(problem, j, x)?;
        }
    }
    Ok(g)
}

/// B_j(x), assembled from its five summands.
pub fn hessian_block(problem: &SoftmaxProblem, j: usize, x: &Array1<f64>) -> Result<HessianBlock> {
    let f = problem.softmax_block(j, x)?.probs;
    let b = &problem.block(j)?.b;
    let c = &f - b;
    let q: Array1<f64> = f.iter().zip(b.iter()).map(|(fi, bi)| (2.0 * fi - bi) * fi).collect();
    let coeff_outer: f64 = f
        .iter()
        .zip(b.iter())
        .map(|(fi, bi)| 3.0 * fi - 2.0 * bi)
        .zip(f.iter())
        .map(|(v, fi)| v * fi)
        .sum();
    let coeff_diag: f64 = c.dot(&f);

    let p0 = outer(&f, &f) * coeff_outer;
    let p1 = outer(&q, &f) * -1.0;
    let p2 = outer(&f, &q) * -1.0;
    let p3 = Array2::from_diag(&f) * -coeff_diag;
    let p4 = Array2::from_diag(&q);

    let matrix = &(&(&(&p0 + &p1) + &p2) + &p3) + &p4;
    Ok(HessianBlock {
        matrix,
        parts: [p0, p1, p2, p3, p4],
    })
}

/// ∇²L_exp(x) = Σ_j A_jᵀ B_j(x) A_j over the given blocks.
pub fn hessian_exp_total(
    problem: &SoftmaxProblem,
    x: &Array1<f64>,
    batch: Batch,
) -> Result<Array2<f64>> {
    let ids = problem.resolve_batch(batch)?;
    let d = problem.dim();
    let mut h = Array2::<f64>::zeros((d, d));
    for j in ids {
        let bj = hessian_block(problem, j, x)?;
        let a = &problem.block(j)?.a;
        h += &a.t().dot(&bj.matrix).dot(a);
    }
    Ok(h)
}

/// Regularizer Hessian Σ_j A_jᵀ W² A_j (constant in x).
pub fn hessian_reg_total(problem: &SoftmaxProblem) -> Result<Array2<f64>> {
    let d = problem.dim();
    let w2 = Array2::from_diag(&problem.weights().mapv(|w| w * w));
    let mut h = Array2::<f64>::zeros((d, d));
    for blk in problem.blocks() {
        h += &blk.a.t().dot(&w2).dot(&blk.a);
    }
    Ok(h)
}

/// Full Hessian ∇²L(x) including the regularizer.
pub fn hessian_total(problem: &SoftmaxProblem, x: &Array1<f64>) -> Result<Array2<f64>> {
    Ok(&hessian_exp_total(problem, x, None)? + &hessian_reg_total(problem)?)
}

/// Default central-difference step for gradient checks.
pub fn fd_step_gradient(x: &Array1<f64>) -> f64 {
    1e-5 * (1.0 + x.iter().fold(0.0f64, |a, v| a.max(v.abs())))
}

/// Default central-difference step for Hessian-of-gradient checks.
pub fn fd_step_hessian(x: &Array1<f64>) -> f64 {
    1e-4 * (1.0 + x.iter().fold(0.0f64, |a, v| a.max(v.abs())))
}

/// Central-difference gradient of a scalar function: the independent oracle
/// against which the analytic gradients are verified.
pub fn fd_gradient_oracle<F>(loss: F, x: &Array1<f64>, h: f64) -> Result<Array1<f64>>
where
    F: Fn(&Array1<f64>) -> Result<f64>,
{
    if h <= 0.0 {
        return Err(Error::InvalidInput(format!("step must be positive, got {h}")));
    }
    let mut g = Array1::<f64>::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let plus = loss(&xp)?;
        xp[i] = x[i] - h;
        let minus = loss(&xp)?;
        xp[i] = x[i];
        g[i] = (plus - minus) / (2.0 * h);
    }
    Ok(g)
}

/// Central-difference Jacobian of a vector function; used with an analytic
/// gradient to oracle-check Hessians.
pub fn fd_jacobian_oracle<F>(grad: F, x: &Array1<f64>, h: f64) -> Result<Array2<f64>>
where
    F: Fn(&Array1<f64>) -> Result<Array1<f64>>,
{
    if h <= 0.0 {
        return Err(Error::InvalidInput(format!("step must be positive, got {h}")));
    }
    let d = x.len();
    let probe = grad(x)?;
    let m = probe.len();
    let mut jac = Array2::<f64>::zeros((m, d));
    let mut xp = x.clone();
    for i in 0..d {
        xp[i] = x[i] + h;
        let plus = grad(&xp)?;
        xp[i] = x[i] - h;
        let minus = grad(&xp)?;
        xp[i] = x[i];
        for r in 0..m {
            jac[[r, i]] = (plus[r] - minus[r]) / (2.0 * h);
        }
    }
    Ok(jac)
}
