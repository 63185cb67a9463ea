//! Problem instances and exact, overflow-safe loss evaluation.
//!
//! A problem is a collection of data blocks (A_j, b_j) plus a diagonal
//! regularizer weight vector w. The per-block losses are
//!
//! ```text
//! L_exp,j(x) = 0.5 ‖softmax(A_j x) − b_j‖₂²
//! L_reg,j(x) = 0.5 ‖W A_j x‖₂²          with W = diag(w)
//! ```
//!
//! and the total loss sums both over all blocks. Batched evaluation sums the
//! selected blocks; by default the regularizer is included per selected block
//! so that minibatch gradients stay proportional to the full gradient in
//! expectation. Softmax is always evaluated via max-shift, which leaves the
//! result unchanged and keeps exp() in range for any ‖A‖, ‖x‖.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Tolerance for probability-simplex checks.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// One data block: a real matrix and a target vector with ‖b‖₁ ≤ 1, b ≥ 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub a: Array2<f64>,
    pub b: Array1<f64>,
}

/// A softmax regression instance. Immutable after construction; all
/// operations are pure functions of `(problem, x)` and safe to share across
/// threads.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxProblem {
    blocks: Vec<Block>,
    /// Regularizer weights w (W = diag(w)), one weight per row.
    weights: Array1<f64>,
    /// Declared bound on the block spectral norms.
    radius: f64,
}

/// Result of one softmax evaluation.
#[derive(Debug, Clone)]
pub struct SoftmaxOutput {
    /// The probability vector f_j(x); entries in (0,1], summing to 1.
    pub probs: Array1<f64>,
    /// Unshifted log of the partition ⟨exp(A_j x), 1⟩.
    pub log_partition: f64,
}

/// Block subset selector. `None` means all blocks.
pub type Batch<'a> = Option<&'a [usize]>;

impl SoftmaxProblem {
    /// Validates every construction invariant: consistent shapes, finite
    /// entries, b_j entrywise ≥ 0 with ‖b_j‖₁ ≤ 1, and ‖A_j‖ ≤ radius.
    pub fn new(blocks: Vec<Block>, weights: Array1<f64>, radius: f64) -> Result<Self> {
        let p = Self::new_unchecked(blocks, weights, radius);
        p.validate()?;
        Ok(p)
    }

    /// Skips validation. Used by the harness to inject deliberately invalid
    /// instances into the verification suite.
    pub fn new_unchecked(blocks: Vec<Block>, weights: Array1<f64>, radius: f64) -> Self {
        Self {
            blocks,
            weights,
            radius,
        }
    }

    /// Re-runs the construction invariants; `new` calls this.
    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::InvalidInput("at least one block required".into()));
        }
        let n_rows = self.blocks[0].a.nrows();
        let dim = self.blocks[0].a.ncols();
        if n_rows == 0 || dim == 0 {
            return Err(Error::InvalidInput("blocks must be non-empty matrices".into()));
        }
        if !(self.radius > 0.0) {
            return Err(Error::InvalidInput(format!(
                "radius must be positive, got {}",
                self.radius
            )));
        }
        if self.weights.len() != n_rows {
            return Err(Error::InvalidInput(format!(
                "weights length {} != n_rows {}",
                self.weights.len(),
                n_rows
            )));
        }
        if self.weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite regularizer weight".into()));
        }
        for (j, blk) in self.blocks.iter().enumerate() {
            if blk.a.nrows() != n_rows || blk.a.ncols() != dim || blk.b.len() != n_rows {
                return Err(Error::InvalidInput(format!(
                    "block {j} has inconsistent shape"
                )));
            }
            if blk.a.iter().any(|v| !v.is_finite()) || blk.b.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("block {j} has non-finite entries")));
            }
            if blk.b.iter().any(|&v| v < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "block {j}: target must be entrywise nonnegative"
                )));
            }
            let b_l1: f64 = blk.b.iter().map(|v| v.abs()).sum();
            if b_l1 > 1.0 + SIMPLEX_TOL {
                return Err(Error::InvalidInput(format!(
                    "block {j}: ‖b‖₁ = {b_l1} exceeds 1"
                )));
            }
            let spec = linalg::spectral_norm(&blk.a)?;
            if spec > self.radius * (1.0 + 1e-9) + 1e-12 {
                return Err(Error::InvalidInput(format!(
                    "block {j}: ‖A‖ = {spec} exceeds radius {}",
                    self.radius
                )));
            }
        }
        Ok(())
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_rows(&self) -> usize {
        self.blocks[0].a.nrows()
    }

    pub fn dim(&self) -> usize {
        self.blocks[0].a.ncols()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, j: usize) -> Result<&Block> {
        self.blocks
            .get(j)
            .ok_or_else(|| Error::InvalidInput(format!("block index {j} out of range")))
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    fn check_x(&self, x: &Array1<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "x has length {}, expected {}",
                x.len(),
                self.dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite entry in x".into()));
        }
        Ok(())
    }

    /// Resolves a batch selector: checks range, absence of duplicates, and
    /// non-emptiness. Returns the index list to sum over (full range for
    /// `None`).
    pub fn resolve_batch(&self, batch: Batch) -> Result<Vec<usize>> {
        match batch {
            None => Ok((0..self.n_blocks()).collect()),
            Some(ids) => {
                if ids.is_empty() {
                    return Err(Error::InvalidInput("empty batch".into()));
                }
                let mut sorted = ids.to_vec();
                sorted.sort_unstable();
                for w in sorted.windows(2) {
                    if w[0] == w[1] {
                        return Err(Error::InvalidInput(format!(
                            "duplicate block index {} in batch",
                            w[0]
                        )));
                    }
                }
                if *sorted.last().unwrap() >= self.n_blocks() {
                    return Err(Error::InvalidInput(format!(
                        "block index {} out of range",
                        sorted.last().unwrap()
                    )));
                }
                Ok(ids.to_vec())
            }
        }
    }

    /// f_j(x) via max-shift, together with the unshifted log-partition.
    pub fn softmax_block(&self, j: usize, x: &Array1<f64>) -> Result<SoftmaxOutput> {
        self.check_x(x)?;
        let blk = self.block(j)?;
        let u = blk.a.dot(x);
        Ok(softmax_of_logits(&u))
    }

    /// c_j(x) = f_j(x) − b_j.
    pub fn residual_block(&self, j: usize, x: &Array1<f64>) -> Result<Array1<f64>> {
        let out = self.softmax_block(j, x)?;
        Ok(&out.probs - &self.blocks[j].b)
    }

    /// L_exp,j(x) = 0.5 ‖c_j(x)‖₂².
    pub fn loss_exp_block(&self, j: usize, x: &Array1<f64>) -> Result<f64> {
        let c = self.residual_block(j, x)?;
        Ok(0.5 * c.iter().map(|v| v * v).sum::<f64>())
    }

    /// L_reg,j(x) = 0.5 ‖W A_j x‖₂².
    pub fn loss_reg_block(&self, j: usize, x: &Array1<f64>) -> Result<f64> {
        self.check_x(x)?;
        let blk = self.block(j)?;
        let u = blk.a.dot(x);
        Ok(0.5
            * u.iter()
                .zip(self.weights.iter())
                .map(|(ui, wi)| (wi * ui).powi(2))
                .sum::<f64>())
    }

    /// Batched total loss. The regularizer is included per selected block;
    /// `loss_total_with` exposes the exp-only form.
    pub fn loss_total(&self, x: &Array1<f64>, batch: Batch) -> Result<f64> {
        self.loss_total_with(x, batch, true)
    }

    /// Batched loss with an explicit choice of whether the regularizer rides
    /// along with each selected block. With `None` (full sum) the regularizer
    /// is always included: that is the definition of L(x).
    pub fn loss_total_with(&self, x: &Array1<f64>, batch: Batch, reg_in_batch: bool) -> Result<f64> {
        let include_reg = batch.is_none() || reg_in_batch;
        let ids = self.resolve_batch(batch)?;
        let mut total = 0.0;
        for j in ids {
            total += self.loss_exp_block(j, x)?;
            if include_reg {
                total += self.loss_reg_block(j, x)?;
            }
        }
        Ok(total)
    }
}

/// Softmax of a logit vector with max-shift; shift invariance makes the
/// result identical to the literal definition.
pub fn softmax_of_logits(u: &Array1<f64>) -> SoftmaxOutput {
    let max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Array1<f64> = u.mapv(|v| (v - max).exp());
    let sum: f64 = shifted.sum();
    SoftmaxOutput {
        probs: shifted / sum,
        log_partition: max + sum.ln(),
    }
}

// ---------------------------------------------------------------------------
// JSON schema
// ---------------------------------------------------------------------------

/// Wire form of a problem instance:
/// `{"n_blocks","n_rows","dim","radius","blocks":[{"A":[[..]],"b":[..]}],"w":[..]}`
/// with row-major matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemJson {
    pub n_blocks: usize,
    pub n_rows: usize,
    pub dim: usize,
    pub radius: f64,
    pub blocks: Vec<BlockJson>,
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockJson {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl From<&SoftmaxProblem> for ProblemJson {
    fn from(p: &SoftmaxProblem) -> Self {
        ProblemJson {
            n_blocks: p.n_blocks(),
            n_rows: p.n_rows(),
            dim: p.dim(),
            radius: p.radius(),
            blocks: p
                .blocks()
                .iter()
                .map(|blk| BlockJson {
                    a: blk.a.rows().into_iter().map(|r| r.to_vec()).collect(),
                    b: blk.b.to_vec(),
                })
                .collect(),
            w: p.weights().to_vec(),
        }
    }
}

impl TryFrom<ProblemJson> for SoftmaxProblem {
    type Error = Error;

    fn try_from(json: ProblemJson) -> Result<SoftmaxProblem> {
        if json.blocks.len() != json.n_blocks {
            return Err(Error::InvalidInput(format!(
                "n_blocks = {} but {} blocks given",
                json.n_blocks,
                json.blocks.len()
            )));
        }
        let mut blocks = Vec::with_capacity(json.blocks.len());
        for (j, blk) in json.blocks.into_iter().enumerate() {
            if blk.a.len() != json.n_rows || blk.a.iter().any(|row| row.len() != json.dim) {
                return Err(Error::InvalidInput(format!(
                    "block {j}: matrix shape does not match (n_rows, dim)"
                )));
            }
            let flat: Vec<f64> = blk.a.into_iter().flatten().collect();
            let a = Array2::from_shape_vec((json.n_rows, json.dim), flat)
                .map_err(|e| Error::InvalidInput(e.to_string()))?;
            blocks.push(Block {
                a,
                b: Array1::from(blk.b),
            });
        }
        SoftmaxProblem::new(blocks, Array1::from(json.w), json.radius)
    }
}

impl SoftmaxProblem {
    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ProblemJson::from(self))?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let json: ProblemJson = serde_json::from_str(s)?;
        json.try_into()
    }
}
