//! Config-driven entry points behind the `zospsa` CLI: instance generation,
//! experiment runs, diagnostics, and the verification suite.
//!
//! A single JSON document configures everything; dotted CLI flags
//! (`--opt.batch_size=4`) override individual fields. Outputs land in the
//! configured directory as `problem.json`, `trace.csv`, `summary.json`,
//! `diagnostics.json`, and `verify.json`, overwritten only with `--force`.
//! Identical config and seed reproduce byte-identical outputs, except for
//! the wall-clock column of the trace.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::calculus;
use crate::diagnostics::{self, DiagConfig, DiagnosticsReport};
use crate::error::{Error, Result};
use crate::estimator::{self, Epsilon, SpsaConfig};
use crate::linalg;
use crate::model::{Block, ProblemJson, SoftmaxProblem};
use crate::objective::ExpOnlyBatches;
use crate::optimizer::{self, Eta, Mode, OptConfig, RunOutcome, RunTrace};
use crate::rng::{self, StreamKind};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Generator parameters for a random instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub n_blocks: usize,
    pub n_rows: usize,
    pub dim: usize,
    pub radius: f64,
    /// Strong-convexity target μ: weights are sized so
    /// min_i w_i²·σ_min(A_j) ≥ mu_target for every block.
    pub mu_target: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Inline instance or generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemSpec {
    Inline(ProblemJson),
    Generate(GenParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub force: bool,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            force: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Master seed; when set it reseeds the generator, the SPSA streams, and
    /// the diagnostics sampling.
    #[serde(default)]
    pub seed: Option<u64>,
    pub problem: ProblemSpec,
    #[serde(default = "default_opt")]
    pub opt: OptConfig,
    #[serde(default)]
    pub diag: DiagConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Batched losses drop the per-block regularizer (the exp-only batch
    /// convention). Full sums always keep it.
    #[serde(default)]
    pub no_reg_in_batch: bool,
}

fn default_opt() -> OptConfig {
    OptConfig {
        eta: Eta::auto(),
        batch_size: 4,
        max_iters: 100_000,
        target_gap: 1e-4,
        spsa: SpsaConfig {
            epsilon: Epsilon::auto(),
            k_samples: 2,
            seed: 0,
        },
        mode: Mode::ZerothOrder,
        log_true_grad: true,
    }
}

impl Default for ExperimentConfig {
    /// The default verification instance: small enough that the whole suite
    /// finishes in minutes on one core.
    fn default() -> Self {
        Self {
            seed: None,
            problem: ProblemSpec::Generate(GenParams {
                n_blocks: 4,
                n_rows: 6,
                dim: 4,
                radius: 4.0,
                mu_target: 0.1,
                seed: 7,
            }),
            opt: default_opt(),
            diag: DiagConfig::default(),
            output: OutputConfig::default(),
            no_reg_in_batch: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let ProblemSpec::Generate(g) = &self.problem {
            if g.n_blocks == 0 || g.n_rows == 0 || g.dim == 0 {
                return Err(Error::Config("generator sizes must be positive".into()));
            }
            if !(g.radius >= 0.1) {
                return Err(Error::Config(format!(
                    "radius must be at least 0.1, got {}",
                    g.radius
                )));
            }
            if !(g.mu_target > 0.0) {
                return Err(Error::Config("mu_target must be positive".into()));
            }
        }
        self.diag.validate()?;
        self.opt.spsa.validate()?;
        Ok(())
    }

    /// Applies the master seed to the per-component seeds.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        if let ProblemSpec::Generate(g) = &mut self.problem {
            g.seed = seed;
        }
        self.opt.spsa.seed = seed;
        self.diag.seed = seed;
    }

    /// Materializes the problem instance.
    pub fn build_problem(&self) -> Result<SoftmaxProblem> {
        match &self.problem {
            ProblemSpec::Inline(json) => json.clone().try_into(),
            ProblemSpec::Generate(g) => generate_instance(g),
        }
    }
}

/// Applies `--key.path=value` overrides onto the config JSON tree.
pub fn apply_overrides(text: &str, overrides: &[(String, String)]) -> Result<String> {
    let mut root: serde_json::Value = serde_json::from_str(text)?;
    for (path, raw) in overrides {
        let value: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.clone()));
        let parts: Vec<&str> = path.split('.').collect();
        let (last, init) = parts.split_last().expect("split produces at least one part");
        let mut node = &mut root;
        for part in init {
            node = node
                .as_object_mut()
                .ok_or_else(|| {
                    Error::Config(format!("override path {path}: {part} is not an object"))
                })?
                .entry(part.to_string())
                .or_insert_with(|| serde_json::Value::Object(Default::default()));
        }
        node.as_object_mut()
            .ok_or_else(|| Error::Config(format!("override path {path}: not an object")))?
            .insert(last.to_string(), value);
    }
    Ok(serde_json::to_string(&root)?)
}

// ---------------------------------------------------------------------------
// Instance generation
// ---------------------------------------------------------------------------

/// Random instance satisfying every construction invariant: blocks are
/// spectrally normalized Gaussian matrices (‖A_j‖ = radius exactly), targets
/// are scaled simplex draws (‖b_j‖₁ ≤ 1), and the uniform weight
/// w = √(mu_target / min_j σ_min(A_j)) meets the strong-convexity weight
/// hypothesis for every block.
pub fn generate_instance(params: &GenParams) -> Result<SoftmaxProblem> {
    let mut rng = rng::stream(params.seed, StreamKind::Instance, 0);
    let mut blocks = Vec::with_capacity(params.n_blocks);
    let mut sigma_min_all = f64::INFINITY;
    for j in 0..params.n_blocks {
        let mut accepted = None;
        for _attempt in 0..10 {
            let g = Array2::from_shape_fn((params.n_rows, params.dim), |_| {
                rng.sample::<f64, _>(StandardNormal)
            });
            let svals = linalg::singular_values(&g)?;
            let smax = svals.iter().copied().fold(0.0, f64::max);
            let smin = svals.iter().copied().fold(f64::INFINITY, f64::min);
            if smax == 0.0 || smin <= 1e-12 * smax {
                continue;
            }
            accepted = Some((g * (params.radius / smax), smin * params.radius / smax));
            break;
        }
        let (a, smin) = accepted.ok_or_else(|| {
            Error::InvalidInput(format!("block {j}: singular matrix after 10 attempts"))
        })?;
        sigma_min_all = sigma_min_all.min(smin);
        let raw: Vec<f64> = (0..params.n_rows)
            .map(|_| rand_distr::Distribution::sample(&rand_distr::Exp1, &mut rng))
            .collect();
        let total: f64 = raw.iter().sum();
        let scale: f64 = 0.5 + 0.5 * rng.random::<f64>();
        let b = Array1::from(raw) * (scale / total);
        blocks.push(Block { a, b });
    }
    let w = Array1::from_elem(params.n_rows, (params.mu_target / sigma_min_all).sqrt());
    SoftmaxProblem::new(blocks, w, params.radius)
}

// ---------------------------------------------------------------------------
// Output plumbing
// ---------------------------------------------------------------------------

fn write_output(dir: &Path, name: &str, contents: &str, force: bool) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    if path.exists() && !force {
        return Err(Error::Config(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    std::fs::write(&path, contents)?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// `zospsa generate`: builds the instance and writes `problem.json`.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let problem = cfg.build_problem()?;
    write_output(
        &cfg.output.dir,
        "problem.json",
        &problem.to_json_string()?,
        cfg.output.force,
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub outcome: RunOutcome,
    pub target_reached: bool,
    pub iterations: u64,
    pub final_gap: f64,
    pub l_star: f64,
    pub eta_used: f64,
    pub max_x_norm: f64,
    pub update_loss_evals: u64,
    #[serde(rename = "T_observed")]
    pub t_observed: u64,
    #[serde(rename = "T_theory_log")]
    pub t_theory_log: f64,
    #[serde(rename = "T_emp_log")]
    pub t_emp_log: f64,
    pub fitted_decay: Option<f64>,
}

/// Resolved step size: the analysis value min{1/l, μB/(lα)} for first-order
/// runs, additionally divided by the dimension factor γ for zeroth-order
/// runs (the zeroth-order step must absorb the γ-times-larger quadratic
/// term of the descent bound).
pub fn resolve_eta(cfg: &OptConfig, report: &DiagnosticsReport) -> Result<f64> {
    match cfg.eta {
        Eta::Fixed(e) => Ok(e),
        Eta::Auto(_) => {
            let mu = if report.mu_cert > 0.0 {
                report.mu_cert
            } else {
                report.mu_emp
            };
            let eta0 =
                optimizer::auto_step_size(report.l_emp, mu, cfg.batch_size, report.alpha_emp)?;
            Ok(match cfg.mode {
                Mode::FirstOrder => eta0,
                Mode::ZerothOrder => eta0 / report.gamma,
            })
        }
    }
}

/// `zospsa run`: executes the optimizer and writes `trace.csv`,
/// `summary.json`, and `diagnostics.json`. Callers map `target_reached`
/// onto the exit code.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let problem = cfg.build_problem()?;
    let mut report = diagnostics::diagnose(&problem, &cfg.diag)?;

    let l_star = oracle_l_star(&problem, &report)?;
    let eta = resolve_eta(&cfg.opt, &report)?;
    let mut run_cfg = cfg.opt;
    run_cfg.eta = Eta::Fixed(eta);

    let mut x0_rng = rng::stream(cfg.opt.spsa.seed, StreamKind::Init, 0);
    let x0 = rng::sample_ball(&mut x0_rng, problem.dim(), problem.radius().min(1.0));

    let outcome = if cfg.no_reg_in_batch {
        optimizer::run(&ExpOnlyBatches(&problem), &x0, &run_cfg, l_star)
    } else {
        optimizer::run(&problem, &x0, &run_cfg, l_star)
    };
    let trace: RunTrace = match outcome {
        Ok(t) => t,
        Err(Error::Divergence { iter, detail, trace }) => {
            // Keep the partial trace on disk for inspection, then fail.
            let _ = write_output(&cfg.output.dir, "trace.csv", &trace.to_csv(), true);
            return Err(Error::Divergence { iter, detail, trace });
        }
        Err(e) => return Err(e),
    };

    report.t_observed = trace.iterations();
    let gap0 = trace.records.first().map(|r| r.loss_gap).unwrap_or(0.0);
    let mu = if report.mu_cert > 0.0 {
        report.mu_cert
    } else {
        report.mu_emp
    };
    let bound_log = |l_log: f64| -> Result<f64> {
        if gap0 > cfg.opt.target_gap {
            diagnostics::iteration_bound(
                report.gamma,
                l_log,
                mu,
                report.alpha_emp,
                cfg.opt.batch_size,
                cfg.opt.target_gap,
                gap0,
            )
        } else {
            Ok(f64::NEG_INFINITY)
        }
    };
    let t_theory_log = bound_log(report.l_theory_log)?;
    let t_emp_log = bound_log(report.l_emp.ln())?;

    let summary = RunSummary {
        outcome: trace.outcome,
        target_reached: trace.outcome == RunOutcome::TargetReached,
        iterations: trace.iterations(),
        final_gap: trace.final_gap(),
        l_star,
        eta_used: eta,
        max_x_norm: trace.max_x_norm,
        update_loss_evals: trace.update_loss_evals,
        t_observed: trace.iterations(),
        t_theory_log,
        t_emp_log,
        fitted_decay: trace.fitted_decay(0.8),
    };

    write_output(&cfg.output.dir, "trace.csv", &trace.to_csv(), cfg.output.force)?;
    write_output(
        &cfg.output.dir,
        "summary.json",
        &serde_json::to_string_pretty(&summary)?,
        cfg.output.force,
    )?;
    write_output(
        &cfg.output.dir,
        "diagnostics.json",
        &serde_json::to_string_pretty(&report)?,
        cfg.output.force,
    )?;
    Ok(summary)
}

fn oracle_l_star(problem: &SoftmaxProblem, report: &DiagnosticsReport) -> Result<f64> {
    let x0 = Array1::<f64>::zeros(problem.dim());
    let oracle = optimizer::l_star_oracle(
        problem,
        &x0,
        1.0 / report.l_emp.max(1e-12),
        1_000_000,
        1e-12,
    )?;
    Ok(oracle.l_star)
}

/// `zospsa diagnose`: writes `diagnostics.json` and returns the report.
pub fn cmd_diagnose(cfg: &ExperimentConfig) -> Result<DiagnosticsReport> {
    let problem = cfg.build_problem()?;
    let report = diagnostics::diagnose(&problem, &cfg.diag)?;
    write_output(
        &cfg.output.dir,
        "diagnostics.json",
        &serde_json::to_string_pretty(&report)?,
        cfg.output.force,
    )?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Verification suite
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub all_pass: bool,
    pub checks: BTreeMap<String, CheckResult>,
}

/// Options for deliberately breaking the suite (negative testing).
#[derive(Debug, Clone, Copy, Default)]
pub struct VerifyOptions {
    /// Scale one target vector past the ‖b‖₁ ≤ 1 invariant before checking.
    pub inject_invalid_b: bool,
}

/// `zospsa verify`: every lemma-level property on one instance plus the
/// random oracle families, written to `verify.json`. Exit code 0 iff all
/// checks pass.
pub fn cmd_verify(cfg: &ExperimentConfig, opts: VerifyOptions) -> Result<VerifyReport> {
    let mut checks: BTreeMap<String, CheckResult> = BTreeMap::new();
    let record = |checks: &mut BTreeMap<String, CheckResult>, name: &str, pass: bool, detail: String| {
        checks.insert(name.to_string(), CheckResult { pass, detail });
    };

    let problem = {
        let p = cfg.build_problem()?;
        if opts.inject_invalid_b {
            let mut blocks = p.blocks().to_vec();
            let l1: f64 = blocks[0].b.iter().sum();
            blocks[0].b *= 1.5 / l1.max(1e-9);
            SoftmaxProblem::new_unchecked(blocks, p.weights().clone(), p.radius())
        } else {
            p
        }
    };
    let seed = cfg.diag.seed;
    let trials = cfg.diag.trials;

    // Construction invariants.
    match problem.validate() {
        Ok(()) => record(
            &mut checks,
            "problem_invariants",
            true,
            "all construction invariants hold".into(),
        ),
        Err(e) => record(&mut checks, "problem_invariants", false, e.to_string()),
    }

    // Analytic gradient vs central differences on a random family.
    {
        let mut worst = 0.0f64;
        let mut rng = rng::stream(seed, StreamKind::Diagnostics, 70);
        for i in 0..40u64 {
            let params = GenParams {
                n_blocks: 1 + (rng.random::<u64>() % 5) as usize,
                n_rows: 2 + (rng.random::<u64>() % 7) as usize,
                dim: 2 + (rng.random::<u64>() % 7) as usize,
                radius: 0.5 + 3.5 * rng.random::<f64>(),
                mu_target: 0.1,
                seed: seed.wrapping_add(1000 + i),
            };
            let p = generate_instance(&params)?;
            let x = unsaturated_anchor(&p, &mut rng);
            let g = calculus::grad_total(&p, &x, None)?;
            let fd = calculus::fd_gradient_oracle(
                |y| p.loss_total(y, None),
                &x,
                calculus::fd_step_gradient(&x),
            )?;
            let num = (&g - &fd).iter().map(|v| v * v).sum::<f64>().sqrt();
            let den = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            worst = worst.max(num / den);
        }
        record(
            &mut checks,
            "gradient_oracle",
            worst <= 1e-6,
            format!("worst relative error {worst:.3e} (tolerance 1e-6)"),
        );
    }

    // Analytic Hessian vs finite differences of the gradient.
    {
        let mut worst = 0.0f64;
        let mut rng = rng::stream(seed, StreamKind::Diagnostics, 71);
        for i in 0..12u64 {
            let params = GenParams {
                n_blocks: 1 + (rng.random::<u64>() % 4) as usize,
                n_rows: 2 + (rng.random::<u64>() % 6) as usize,
                dim: 2 + (rng.random::<u64>() % 6) as usize,
                radius: 0.5 + 3.5 * rng.random::<f64>(),
                mu_target: 0.1,
                seed: seed.wrapping_add(2000 + i),
            };
            let p = generate_instance(&params)?;
            let x = unsaturated_anchor(&p, &mut rng);
            let h = calculus::hessian_exp_total(&p, &x, None)?;
            let fd = calculus::fd_jacobian_oracle(
                |y| calculus::grad_exp_total(&p, y, None),
                &x,
                calculus::fd_step_hessian(&x),
            )?;
            let scale = 1.0 + linalg::spectral_norm(&h)?;
            let dev = h
                .iter()
                .zip(fd.iter())
                .fold(0.0f64, |a, (u, v)| a.max((u - v).abs()));
            worst = worst.max(dev / scale);
        }
        record(
            &mut checks,
            "hessian_oracle",
            worst <= 1e-4,
            format!("worst scaled entrywise error {worst:.3e} (tolerance 1e-4)"),
        );
    }

    // Rank bounds on the Hessian factors and the effective-rank bound.
    {
        let mut pass = true;
        let mut detail = String::new();
        let mut rng = rng::stream(seed, StreamKind::Diagnostics, 72);
        let cap = 2.0 * problem.n_rows() as f64 + 2.0;
        for _ in 0..60 {
            let x = rng::sample_ball(&mut rng, problem.dim(), problem.radius());
            for j in 0..problem.n_blocks() {
                let bj = calculus::hessian_block(&problem, j, &x)?;
                let nr = diagnostics::numerical_rank(&bj.matrix)? as f64;
                if nr > cap {
                    pass = false;
                    detail = format!("numerical rank {nr} exceeds {cap}");
                }
                if let Ok(sr) = diagnostics::stable_rank(&bj.matrix) {
                    if sr > cap + 1e-9 {
                        pass = false;
                        detail = format!("stable rank {sr} exceeds {cap}");
                    }
                }
            }
            let er = diagnostics::erank_bound_check(&problem, &x)?;
            if !er.holds {
                pass = false;
                detail = format!(
                    "effective-rank bound violated: {} > {}",
                    er.aggregate_ratio, er.aggregate_bound
                );
            }
        }
        if pass {
            detail =
                format!("rank(B_j), srank(B_j) ≤ {cap} and effective-rank bounds hold on 60 samples");
        }
        record(&mut checks, "rank_bounds", pass, detail);
    }

    // SPSA moments on the configured instance.
    {
        let mut rng = rng::stream(seed, StreamKind::Diagnostics, 73);
        let x = unsaturated_anchor(&problem, &mut rng);
        let d = problem.dim() as f64;
        let g = calculus::grad_total(&problem, &x, None)?;
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let spsa = SpsaConfig {
            epsilon: Epsilon::Fixed(1e-5),
            k_samples: 1,
            seed,
        };
        let mc = trials.min(40_000);
        let mut mean = Array1::<f64>::zeros(problem.dim());
        for t in 0..mc {
            mean += &estimator::spsa_estimate(&problem, &x, None, &spsa, t as u64)?.g_hat;
        }
        mean /= mc as f64;
        let rel = (&mean - &g).iter().map(|v| v * v).sum::<f64>().sqrt() / gnorm.max(1e-12);
        record(
            &mut checks,
            "spsa_mean",
            rel <= 0.05,
            format!("E[ĝ] vs ∇L relative error {rel:.4} over {mc} trials (tolerance 5%)"),
        );

        let k = 2usize;
        let ratio =
            estimator::sq_norm_ratio_check(&problem, &x, None, k, trials.max(10_000), seed)?;
        let expected = (d + k as f64 + 1.0) / k as f64;
        let rel = (ratio.ratio / expected - 1.0).abs();
        record(
            &mut checks,
            "spsa_sq_norm_ratio",
            rel <= 0.05,
            format!(
                "E[‖ĝ‖²]/‖∇L‖² = {:.4}; Gaussian law (d+k+1)/k = {expected:.4}; deviation {rel:.4}",
                ratio.ratio
            ),
        );

        let sm =
            estimator::second_moment_check(&problem, &x, problem.n_blocks(), k, trials, seed)?;
        record(
            &mut checks,
            "spsa_second_moment",
            sm.max_dev_over_scale <= 0.05,
            format!(
                "full-batch E[ĝĝᵀ] vs (1+1/k)∇L∇Lᵀ + (1/k)‖∇L‖²I: max scaled deviation {:.4}",
                sm.max_dev_over_scale
            ),
        );
    }

    // Shared quantities for the remaining instance checks.
    let l_emp = diagnostics::empirical_smoothness(&problem, cfg.diag.x_samples.max(100), seed)?;
    let kappa = problem
        .blocks()
        .iter()
        .map(|blk| linalg::condition_number(&blk.a))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(1.0f64, f64::max);

    // One-step descent inequality at sampled anchors.
    {
        let gamma = diagnostics::gamma_factor(problem.dim(), 1, kappa);
        let mut rng = rng::stream(seed, StreamKind::Diagnostics, 74);
        let mut pass = true;
        let mut detail = String::new();
        for a in 0..5u64 {
            let x = unsaturated_anchor(&problem, &mut rng);
            let rep = descent_check(&problem, &x, 1, trials, seed.wrapping_add(a), l_emp, gamma)?;
            if !rep.holds {
                pass = false;
                detail = format!(
                    "anchor {a}: mean ΔL {:.3e} above bound {:.3e} + 3·SE {:.1e}",
                    rep.mean_decrease, rep.bound, rep.std_err
                );
            }
        }
        if pass {
            detail = "one-step expected decrease within the γ-bound at 5 anchors".into();
        }
        record(&mut checks, "descent_inequality", pass, detail);
    }

    // Strong convexity certificate, PL inequality, covariance structure.
    {
        let cert = diagnostics::strong_convexity_cert(&problem, cfg.diag.x_samples, seed)?;
        record(
            &mut checks,
            "strong_convexity",
            cert.mu_emp >= cert.mu_cert - 1e-8,
            format!("mu_cert {:.4}, mu_emp {:.4}", cert.mu_cert, cert.mu_emp),
        );

        let l_star = {
            let x0 = Array1::<f64>::zeros(problem.dim());
            optimizer::l_star_oracle(&problem, &x0, 1.0 / l_emp, 1_000_000, 1e-12)?.l_star
        };
        let gamma = diagnostics::gamma_factor(problem.dim(), cfg.opt.spsa.k_samples, kappa);
        let run_cfg = OptConfig {
            eta: Eta::Fixed(1.0 / (l_emp * gamma)),
            batch_size: problem.n_blocks().div_ceil(2),
            max_iters: 2_000,
            target_gap: 1e-9,
            spsa: SpsaConfig {
                epsilon: Epsilon::auto(),
                k_samples: cfg.opt.spsa.k_samples,
                seed,
            },
            mode: Mode::ZerothOrder,
            log_true_grad: true,
        };
        let mut x0_rng = rng::stream(seed, StreamKind::Init, 1);
        let x0 = rng::sample_ball(&mut x0_rng, problem.dim(), 1.0);
        let trace = optimizer::run(&problem, &x0, &run_cfg, l_star)?;
        let pl = diagnostics::pl_check(&trace)?;
        record(
            &mut checks,
            "pl_inequality",
            pl.min_ratio >= cert.mu_cert - 1e-8,
            format!(
                "min PL ratio {:.4} over {} iterates vs mu_cert {:.4}",
                pl.min_ratio, pl.checked, cert.mu_cert
            ),
        );

        let mut rng2 = rng::stream(seed, StreamKind::Diagnostics, 75);
        let anchor = unsaturated_anchor(&problem, &mut rng2);
        let bsize = problem.n_blocks().div_ceil(2).max(1);
        let cov =
            diagnostics::covariance_trace_check(&problem, &anchor, bsize, l_star, trials, seed)?;
        let pass = cov.part1_max_rel < 1e-10
            && cov.part2_rel_err < 0.02
            && cov.part3_min_eig >= -1e-8
            && cov.alpha_emp.is_finite();
        record(
            &mut checks,
            "covariance_identities",
            pass,
            format!(
                "decomposition {:.1e}, batch mean err {:.4}, domination min-eig {:.2e}, alpha_emp {:.3}",
                cov.part1_max_rel, cov.part2_rel_err, cov.part3_min_eig, cov.alpha_emp
            ),
        );
        let full_cov =
            estimator::minibatch_covariance(&problem, &anchor, problem.n_blocks(), seed)?;
        record(
            &mut checks,
            "covariance_full_batch_zero",
            full_cov.iter().all(|&v| v == 0.0),
            "Σ vanishes exactly at B = n".into(),
        );
    }

    // Partition lower bound.
    {
        let beta = diagnostics::beta_check(&problem, 100, seed)?;
        record(
            &mut checks,
            "partition_lower_bound",
            beta.holds,
            format!(
                "min log-partition {:.4} ≥ bound {:.4}",
                beta.min_log_partition, beta.log_bound
            ),
        );
    }

    // Matrix-algebra kits.
    {
        let worst = diagnostics::norm_inequality_kit(5, 4, 50, seed)?;
        record(
            &mut checks,
            "norm_inequality_kit",
            worst >= -1e-10,
            format!("worst slack {worst:.3e}"),
        );
        let psd = diagnostics::psd_domination_kit(4, 6, seed)?;
        record(
            &mut checks,
            "psd_domination_kit",
            psd >= -1e-10,
            format!("most negative eigenvalue {psd:.3e}"),
        );
    }

    let all_pass = checks.values().all(|c| c.pass);
    let report = VerifyReport { all_pass, checks };
    write_output(
        &cfg.output.dir,
        "verify.json",
        &serde_json::to_string_pretty(&report)?,
        cfg.output.force,
    )?;
    Ok(report)
}

/// Seeded anchor with no saturated softmax (‖A_j x‖_∞ ≤ 2), where gradients
/// are O(1) and relative comparisons are meaningful.
pub fn unsaturated_anchor(problem: &SoftmaxProblem, rng: &mut impl Rng) -> Array1<f64> {
    let mut x = rng::sample_ball(rng, problem.dim(), 1.0);
    let worst = problem
        .blocks()
        .iter()
        .map(|blk| blk.a.dot(&x).iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .fold(0.0f64, f64::max);
    if worst > 2.0 {
        x *= 2.0 / worst;
    }
    x
}

/// Monte-Carlo check of the one-step expected-decrease bound
/// E[L(x−ηĝ)] − L(x) ≤ −η‖∇L‖² + ½η²·l_emp·γ·E[‖∇L(x;B)‖²] at full batch
/// with η = 1/(l_emp·γ), where the right side is strictly negative.
#[derive(Debug, Clone, Serialize)]
pub struct DescentReport {
    pub mean_decrease: f64,
    pub bound: f64,
    pub std_err: f64,
    pub eta: f64,
    pub holds: bool,
}

pub fn descent_check(
    problem: &SoftmaxProblem,
    x: &Array1<f64>,
    k: usize,
    trials: usize,
    seed: u64,
    l_emp: f64,
    gamma: f64,
) -> Result<DescentReport> {
    let g = calculus::grad_total(problem, x, None)?;
    let gn2: f64 = g.iter().map(|v| v * v).sum();
    let eta = 1.0 / (l_emp * gamma);
    let l0 = problem.loss_total(x, None)?;
    let cfg = SpsaConfig {
        epsilon: Epsilon::auto(),
        k_samples: k,
        seed,
    };
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for t in 0..trials {
        let est = estimator::spsa_estimate(problem, x, None, &cfg, t as u64)?;
        let x_new = x - &(&est.g_hat * eta);
        let dl = problem.loss_total(&x_new, None)? - l0;
        sum += dl;
        sum_sq += dl * dl;
    }
    let mean = sum / trials as f64;
    let var = (sum_sq / trials as f64 - mean * mean).max(0.0);
    let std_err = (var / trials as f64).sqrt();
    // Full batch: E[‖∇L(x;B)‖²] = ‖∇L‖².
    let bound = -eta * gn2 + 0.5 * eta * eta * l_emp * gamma * gn2;
    Ok(DescentReport {
        mean_decrease: mean,
        bound,
        std_err,
        eta,
        holds: mean <= bound + 3.0 * std_err,
    })
}
