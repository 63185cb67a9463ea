//! Zeroth-order optimization toolkit for regularized softmax regression.
//!
//! The objective is a sum over data blocks (A_j, b_j) of softmax
//! least-squares terms 0.5‖softmax(A_j x) − b_j‖² plus diagonal-weighted
//! ridge terms 0.5‖W A_j x‖². The crate provides
//!
//! - exact, overflow-safe loss evaluation and its full first/second-order
//!   calculus, each cross-checked against finite-difference oracles
//!   ([`model`], [`calculus`]);
//! - SPSA-style two-point gradient estimation with reproducible,
//!   counter-addressed Gaussian perturbation streams and Monte-Carlo moment
//!   checks ([`estimator`], [`rng`]);
//! - minibatch ZO-SGD with a first-order baseline, trace recording, and
//!   step-size policy ([`optimizer`]);
//! - a diagnostics engine that evaluates every constant of the convergence
//!   analysis (smoothness, strong convexity, rank bounds, covariance
//!   structure, iteration bounds) on concrete instances ([`diagnostics`]);
//! - a config-driven harness behind the `zospsa` CLI: instance generation,
//!   experiment runs, and the verification suite ([`harness`]).

pub mod calculus;
pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod optimizer;
pub mod rng;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use model::{Batch, Block, SoftmaxOutput, SoftmaxProblem};
pub use objective::Objective;
