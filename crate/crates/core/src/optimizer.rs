//! Minibatch ZO-SGD and the first-order SGD baseline.
//!
//! The update is `x_{t+1} = x_t − η·ĝ(x_t)` with ĝ either a k-SPSA estimate
//! on a freshly sampled batch (zeroth-order mode) or the batch gradient
//! (first-order mode). Batches are sampled uniformly without replacement,
//! one batch stream counter per iteration, so a run is replayable from the
//! seed alone and a full-size batch removes all sampling variance.

use std::time::Instant;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{spsa_estimate, SpsaConfig};
use crate::objective::Objective;
use crate::rng::{self, StreamKind};

/// Iterates with ‖x‖₂ beyond this are treated as divergence.
pub const DIVERGENCE_NORM: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ZerothOrder,
    FirstOrder,
}

/// Step size: a fixed value, or "auto" to be resolved from diagnostics via
/// `auto_step_size` before the run starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Eta {
    Auto(crate::estimator::AutoTag),
    Fixed(f64),
}

impl Eta {
    pub fn auto() -> Self {
        Eta::Auto(crate::estimator::AutoTag::Auto)
    }
}

fn default_target_gap() -> f64 {
    1e-6
}

fn default_log_true_grad() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    pub eta: Eta,
    pub batch_size: usize,
    pub max_iters: u64,
    /// Stop once loss − L* falls to this value. Accepts "inf" in JSON.
    #[serde(
        default = "default_target_gap",
        deserialize_with = "de_gap",
        serialize_with = "ser_gap"
    )]
    pub target_gap: f64,
    pub spsa: SpsaConfig,
    pub mode: Mode,
    /// Record ‖∇L‖² per iteration. Logging only; switch off to audit that
    /// the zeroth-order update path never touches a gradient.
    #[serde(default = "default_log_true_grad")]
    pub log_true_grad: bool,
}

fn de_gap<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Str(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(v) => Ok(v),
        Raw::Str(s) if s == "inf" => Ok(f64::INFINITY),
        Raw::Str(s) => s.parse::<f64>().map_err(serde::de::Error::custom),
    }
}

fn ser_gap<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("inf")
    }
}

impl OptConfig {
    pub fn validate(&self, n_blocks: usize) -> Result<()> {
        self.spsa.validate()?;
        if self.batch_size < 1 || self.batch_size > n_blocks {
            return Err(Error::Config(format!(
                "batch_size {} out of range 1..={n_blocks}",
                self.batch_size
            )));
        }
        if let Eta::Fixed(e) = self.eta {
            if !(e > 0.0) {
                return Err(Error::Config(format!("eta must be positive, got {e}")));
            }
        }
        if !(self.target_gap > 0.0) {
            return Err(Error::Config(format!(
                "target_gap must be positive, got {}",
                self.target_gap
            )));
        }
        Ok(())
    }

    fn fixed_eta(&self) -> Result<f64> {
        match self.eta {
            Eta::Fixed(e) => Ok(e),
            Eta::Auto(_) => Err(Error::Config(
                "eta is \"auto\"; resolve it with auto_step_size before running".into(),
            )),
        }
    }
}

/// Optimizer state between steps.
#[derive(Debug, Clone)]
pub struct OptState {
    pub x: Array1<f64>,
    pub iter: u64,
    pub eta_current: f64,
    /// Next unused counter for the batch/perturbation streams.
    pub rng_position: u64,
}

/// What one step did, for trace recording.
#[derive(Debug, Clone)]
pub struct StepInfo {
    pub batch: Vec<usize>,
    pub est_sq_norm: f64,
    pub loss_evals: usize,
}

/// Per-iteration trace record. `grad_sq` is absent when gradient logging is
/// disabled (and for the initial row's estimate fields, which have no step
/// behind them).
#[derive(Debug, Clone, Serialize)]
pub struct TraceRecord {
    pub iter: u64,
    pub loss: f64,
    pub loss_gap: f64,
    pub grad_sq: Option<f64>,
    pub est_sq: f64,
    pub batch: Vec<usize>,
    pub eta: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunOutcome {
    TargetReached,
    MaxItersExhausted,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    pub outcome: RunOutcome,
    pub max_x_norm: f64,
    /// Loss evaluations consumed by the update path (2k per ZO step).
    pub update_loss_evals: u64,
    pub final_x: Vec<f64>,
}

impl RunTrace {
    pub fn final_gap(&self) -> f64 {
        self.records.last().map(|r| r.loss_gap).unwrap_or(f64::NAN)
    }

    pub fn iterations(&self) -> u64 {
        self.records.last().map(|r| r.iter).unwrap_or(0)
    }

    /// CSV export with header `iter,loss,loss_gap,grad_sq,est_sq,eta,batch,wall_ms`.
    /// Batch ids are pipe-separated inside the column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,loss,loss_gap,grad_sq,est_sq,eta,batch,wall_ms\n");
        for r in &self.records {
            let grad = r.grad_sq.map(|g| format!("{g}")).unwrap_or_default();
            let batch = r
                .batch
                .iter()
                .map(|b| b.to_string())
                .collect::<Vec<_>>()
                .join("|");
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.iter, r.loss, r.loss_gap, grad, r.est_sq, r.eta, batch, r.wall_ms
            ));
        }
        out
    }

    /// Geometric decay factor fitted by least squares on ln(gap) over the
    /// final `fraction` of the recorded iterations (positive gaps only).
    pub fn fitted_decay(&self, fraction: f64) -> Option<f64> {
        let gaps: Vec<(f64, f64)> = self
            .records
            .iter()
            .filter(|r| r.loss_gap > 0.0)
            .map(|r| (r.iter as f64, r.loss_gap.ln()))
            .collect();
        if gaps.len() < 2 {
            return None;
        }
        let start = ((1.0 - fraction) * gaps.len() as f64).floor() as usize;
        let tail = &gaps[start.min(gaps.len() - 2)..];
        let n = tail.len() as f64;
        let sx: f64 = tail.iter().map(|(t, _)| t).sum();
        let sy: f64 = tail.iter().map(|(_, y)| y).sum();
        let sxx: f64 = tail.iter().map(|(t, _)| t * t).sum();
        let sxy: f64 = tail.iter().map(|(t, y)| t * y).sum();
        let denom = n * sxx - sx * sx;
        if denom.abs() < 1e-30 {
            return None;
        }
        let slope = (n * sxy - sx * sy) / denom;
        Some(slope.exp())
    }
}

/// One update step: samples the batch for `state.iter`, forms the estimate
/// (zeroth- or first-order), and applies `x − η·ĝ`.
pub fn step<O: Objective>(
    objective: &O,
    state: &OptState,
    cfg: &OptConfig,
) -> Result<(OptState, StepInfo)> {
    let n = objective.n_blocks();
    let mut batch_rng = rng::stream(cfg.spsa.seed, StreamKind::Batch, state.iter);
    let batch = rng::sample_batch(&mut batch_rng, n, cfg.batch_size);

    let (g_hat, loss_evals) = match cfg.mode {
        Mode::ZerothOrder => {
            let est = spsa_estimate(objective, &state.x, Some(&batch), &cfg.spsa, state.iter)?;
            (est.g_hat, est.evals)
        }
        Mode::FirstOrder => (objective.grad(&state.x, Some(&batch))?, 0),
    };

    let est_sq_norm: f64 = g_hat.iter().map(|v| v * v).sum();
    let x_new = &state.x - &(&g_hat * state.eta_current);
    let norm = x_new.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() || norm > DIVERGENCE_NORM {
        return Err(Error::InvalidInput(format!(
            "divergent iterate at step {}: ‖x‖ = {norm}",
            state.iter
        )));
    }

    Ok((
        OptState {
            x: x_new,
            iter: state.iter + 1,
            eta_current: state.eta_current,
            rng_position: state.iter + 1,
        },
        StepInfo {
            batch,
            est_sq_norm,
            loss_evals,
        },
    ))
}

/// First-order step size from the convergence analysis:
/// min{1/l_emp, μ·B/(l_emp·α)}. A non-positive α disables the second term
/// (no covariance pressure). Zeroth-order runs additionally divide by the
/// dimension factor γ; see `run` callers.
pub fn auto_step_size(l_emp: f64, mu_cert: f64, batch_size: usize, alpha: f64) -> Result<f64> {
    if !(l_emp > 0.0) {
        return Err(Error::Diagnostics(format!(
            "empirical smoothness must be positive, got {l_emp}"
        )));
    }
    if !(mu_cert > 0.0) {
        return Err(Error::Diagnostics(format!(
            "certified strong convexity must be positive, got {mu_cert}"
        )));
    }
    let first = 1.0 / l_emp;
    if alpha <= 0.0 {
        return Ok(first);
    }
    Ok(first.min(mu_cert * batch_size as f64 / (l_emp * alpha)))
}

/// Runs the loop until the gap target or the iteration budget is hit.
/// `l_star` is the reference minimum used for gap accounting (from the
/// first-order oracle run). On divergence the error carries the partial
/// trace.
pub fn run<O: Objective>(
    objective: &O,
    x0: &Array1<f64>,
    cfg: &OptConfig,
    l_star: f64,
) -> Result<RunTrace> {
    cfg.validate(objective.n_blocks())?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite initial point".into()));
    }
    let eta = cfg.fixed_eta()?;

    let mut records = Vec::new();
    let mut max_x_norm = x0.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut update_loss_evals = 0u64;

    let log_grad = |x: &Array1<f64>| -> Result<Option<f64>> {
        if cfg.log_true_grad {
            let g = objective.grad(x, None)?;
            Ok(Some(g.iter().map(|v| v * v).sum()))
        } else {
            Ok(None)
        }
    };

    let loss0 = objective.loss(x0, None)?;
    records.push(TraceRecord {
        iter: 0,
        loss: loss0,
        loss_gap: loss0 - l_star,
        grad_sq: log_grad(x0)?,
        est_sq: 0.0,
        batch: Vec::new(),
        eta,
        wall_ms: 0.0,
    });

    let mut state = OptState {
        x: x0.clone(),
        iter: 0,
        eta_current: eta,
        rng_position: 0,
    };

    let finish = |records: Vec<TraceRecord>,
                  outcome: RunOutcome,
                  max_x_norm: f64,
                  update_loss_evals: u64,
                  x: &Array1<f64>| RunTrace {
        records,
        outcome,
        max_x_norm,
        update_loss_evals,
        final_x: x.to_vec(),
    };

    if loss0 - l_star <= cfg.target_gap {
        return Ok(finish(
            records,
            RunOutcome::TargetReached,
            max_x_norm,
            0,
            &state.x,
        ));
    }

    while state.iter < cfg.max_iters {
        let t0 = Instant::now();
        let (next, info) = match step(objective, &state, cfg) {
            Ok(v) => v,
            Err(Error::InvalidInput(detail)) => {
                return Err(Error::Divergence {
                    iter: state.iter,
                    detail,
                    trace: Box::new(finish(
                        records,
                        RunOutcome::MaxItersExhausted,
                        max_x_norm,
                        update_loss_evals,
                        &state.x,
                    )),
                });
            }
            Err(e) => return Err(e),
        };
        update_loss_evals += info.loss_evals as u64;
        let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
        let loss = objective.loss(&next.x, None)?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                iter: next.iter,
                detail: format!("non-finite loss {loss}"),
                trace: Box::new(finish(
                    records,
                    RunOutcome::MaxItersExhausted,
                    max_x_norm,
                    update_loss_evals,
                    &state.x,
                )),
            });
        }
        let gap = loss - l_star;
        max_x_norm = max_x_norm.max(next.x.iter().map(|v| v * v).sum::<f64>().sqrt());
        records.push(TraceRecord {
            iter: next.iter,
            loss,
            loss_gap: gap,
            grad_sq: log_grad(&next.x)?,
            est_sq: info.est_sq_norm,
            batch: info.batch,
            eta,
            wall_ms,
        });
        state = next;
        if gap <= cfg.target_gap {
            return Ok(finish(
                records,
                RunOutcome::TargetReached,
                max_x_norm,
                update_loss_evals,
                &state.x,
            ));
        }
    }

    Ok(finish(
        records,
        RunOutcome::MaxItersExhausted,
        max_x_norm,
        update_loss_evals,
        &state.x,
    ))
}

/// High-precision reference minimum: deterministic full-batch gradient
/// descent with a halving safeguard, stopping at ‖∇L‖ ≤ grad_tol or the
/// iteration cap.
pub struct OracleResult {
    pub l_star: f64,
    pub x_star: Array1<f64>,
    pub iterations: u64,
    pub grad_norm: f64,
}

pub fn l_star_oracle<O: Objective>(
    objective: &O,
    x0: &Array1<f64>,
    eta0: f64,
    max_iters: u64,
    grad_tol: f64,
) -> Result<OracleResult> {
    if !(eta0 > 0.0) {
        return Err(Error::InvalidInput(format!("oracle step must be positive, got {eta0}")));
    }
    let mut x = x0.clone();
    let mut eta = eta0;
    let mut loss = objective.loss(&x, None)?;
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    while iterations < max_iters {
        let g = objective.grad(&x, None)?;
        grad_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if grad_norm <= grad_tol {
            break;
        }
        let cand = &x - &(&g * eta);
        let cand_loss = objective.loss(&cand, None)?;
        if cand_loss.is_finite() && cand_loss <= loss {
            x = cand;
            loss = cand_loss;
        } else {
            eta *= 0.5;
            if eta < 1e-18 {
                break;
            }
        }
        iterations += 1;
    }
    Ok(OracleResult {
        l_star: loss,
        x_star: x,
        iterations,
        grad_norm,
    })
}
