//! Batched objective abstraction.
//!
//! The estimator and optimizer only need batched loss evaluations (and, for
//! the first-order baseline and logging, batched gradients). Keeping them
//! generic over this trait lets the test suites drive them with closed-form
//! objectives (quadratics) whose SPSA behavior is known exactly.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array1;

use crate::calculus;
use crate::error::Result;
use crate::model::{Batch, SoftmaxProblem};

pub trait Objective {
    fn dim(&self) -> usize;
    fn n_blocks(&self) -> usize;
    fn loss(&self, x: &Array1<f64>, batch: Batch) -> Result<f64>;
    fn grad(&self, x: &Array1<f64>, batch: Batch) -> Result<Array1<f64>>;
}

impl Objective for SoftmaxProblem {
    fn dim(&self) -> usize {
        self.dim()
    }

    fn n_blocks(&self) -> usize {
        self.n_blocks()
    }

    fn loss(&self, x: &Array1<f64>, batch: Batch) -> Result<f64> {
        self.loss_total(x, batch)
    }

    fn grad(&self, x: &Array1<f64>, batch: Batch) -> Result<Array1<f64>> {
        calculus::grad_total(self, x, batch)
    }
}

/// The same problem with the regularizer dropped from batched sums (the
/// `--no-reg-in-batch` convention). Full-sum evaluations keep the
/// regularizer: that is the definition of the total loss.
pub struct ExpOnlyBatches<'a>(pub &'a SoftmaxProblem);

impl Objective for ExpOnlyBatches<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn n_blocks(&self) -> usize {
        self.0.n_blocks()
    }

    fn loss(&self, x: &Array1<f64>, batch: Batch) -> Result<f64> {
        self.0.loss_total_with(x, batch, false)
    }

    fn grad(&self, x: &Array1<f64>, batch: Batch) -> Result<Array1<f64>> {
        calculus::grad_total_with(self.0, x, batch, false)
    }
}

/// Wrapper that counts loss and gradient evaluations, for auditing that the
/// zeroth-order update path touches only the loss.
pub struct CountingObjective<'a, O: Objective> {
    inner: &'a O,
    pub loss_evals: AtomicU64,
    pub grad_evals: AtomicU64,
}

impl<'a, O: Objective> CountingObjective<'a, O> {
    pub fn new(inner: &'a O) -> Self {
        Self {
            inner,
            loss_evals: AtomicU64::new(0),
            grad_evals: AtomicU64::new(0),
        }
    }

    pub fn loss_count(&self) -> u64 {
        self.loss_evals.load(Ordering::Relaxed)
    }

    pub fn grad_count(&self) -> u64 {
        self.grad_evals.load(Ordering::Relaxed)
    }
}

impl<O: Objective> Objective for CountingObjective<'_, O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn n_blocks(&self) -> usize {
        self.inner.n_blocks()
    }

    fn loss(&self, x: &Array1<f64>, batch: Batch) -> Result<f64> {
        self.loss_evals.fetch_add(1, Ordering::Relaxed);
        self.inner.loss(x, batch)
    }

    fn grad(&self, x: &Array1<f64>, batch: Batch) -> Result<Array1<f64>> {
        self.grad_evals.fetch_add(1, Ordering::Relaxed);
        self.inner.grad(x, batch)
    }
}

/// 0.5‖x‖² as a single-block objective; its SPSA estimates are exact per
/// sample because central differences of a quadratic have no truncation
/// error.
pub struct Quadratic {
    pub dim: usize,
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn n_blocks(&self) -> usize {
        1
    }

    fn loss(&self, x: &Array1<f64>, _batch: Batch) -> Result<f64> {
        Ok(0.5 * x.iter().map(|v| v * v).sum::<f64>())
    }

    fn grad(&self, x: &Array1<f64>, _batch: Batch) -> Result<Array1<f64>> {
        Ok(x.clone())
    }
}
