//! Experiment commands behind the `topk` binary.
//!
//! Every command returns plain data; `main.rs` handles flags and output.
//! Trial `i` of a run with master seed `s` uses `derive_seed(s, i)`, so any
//! trial can be rerun on its own.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use topk_core::losses::{LossFamily, LossSpec};
use topk_core::optim::{finite_diff_grad, top_k_accuracy, train_linear, Init, Optimizer, TrainConfig};
use topk_core::risk::{
    calibration_probe, calibration_scan, cd_counterexample, CalibrationReport, CdCounterexample,
    MinimizeConfig, ScanOutcome,
};
use topk_core::seed::{derive_seed, rng_from_seed};
use topk_core::synth::{gen_exp1, gen_exp2, gen_exp3, Dataset, Exp2Params, Exp3Params};
use topk_core::{CondDist, TieBreakPolicy};

/// Version of the JSON written by every command.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] topk_core::Error),
    #[error("invalid argument: {0}")]
    Arg(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

pub type Result<T> = std::result::Result<T, CliError>;

/// One trained model on one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub loss: String,
    pub top_k: f64,
    pub top1: f64,
    /// Mean surrogate loss on the evaluation split.
    pub surrogate: f64,
    pub unstable: bool,
    /// Learned scores at x = 0 (first experiment only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores_at_zero: Option<Vec<f64>>,
}

/// Per-loss averages; `None` marks a metric not computed because some
/// trial was numerically unstable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossMetrics {
    pub loss: String,
    pub k: usize,
    pub top_k: Option<f64>,
    pub top1: Option<f64>,
    pub surrogate: Option<f64>,
    pub unstable_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub schema_version: u32,
    pub command: String,
    pub parameters: Value,
    pub seed: u64,
    pub trials: usize,
    pub metrics: Vec<LossMetrics>,
    pub records: Vec<TrialRecord>,
    pub wall_time_s: f64,
}

impl RunResult {
    /// Looks up the metrics row of a loss family.
    pub fn metrics_for(&self, family: LossFamily) -> Option<&LossMetrics> {
        self.metrics.iter().find(|m| m.loss == family.name())
    }

    /// JSON lines: one object per trial then the aggregate (without records).
    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(&json!({ "type": "trial", "record": r }))?);
            out.push('\n');
        }
        let mut agg = serde_json::to_value(self)?;
        if let Value::Object(map) = &mut agg {
            map.remove("records");
            map.insert("type".into(), json!("aggregate"));
        }
        out.push_str(&serde_json::to_string(&agg)?);
        out.push('\n');
        Ok(out)
    }

    /// The metrics table as CSV; N/A cells are written as `NA`.
    pub fn metrics_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["loss", "k", "top_k", "top1", "surrogate", "unstable_trials"])?;
        let cell = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"));
        for m in &self.metrics {
            w.write_record([
                m.loss.clone(),
                m.k.to_string(),
                cell(m.top_k),
                cell(m.top1),
                cell(m.surrogate),
                m.unstable_trials.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Arg(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?)
}

fn aggregate(losses: &[LossSpec], records: &[TrialRecord]) -> Vec<LossMetrics> {
    losses
        .iter()
        .map(|l| {
            let rows: Vec<&TrialRecord> = records.iter().filter(|r| r.loss == l.family.name()).collect();
            let unstable = rows.iter().filter(|r| r.unstable).count();
            let mean = |f: fn(&TrialRecord) -> f64| {
                (unstable == 0 && !rows.is_empty())
                    .then(|| rows.iter().map(|r| f(r)).sum::<f64>() / rows.len() as f64)
            };
            LossMetrics {
                loss: l.family.name().to_string(),
                k: l.k,
                top_k: mean(|r| r.top_k),
                top1: mean(|r| r.top1),
                surrogate: mean(|r| r.surrogate),
                unstable_trials: unstable,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp1Options {
    pub trials: usize,
    pub seed: u64,
    pub lr: f64,
    pub epochs: usize,
    pub optimizer: Optimizer,
    /// Half-width of the uniform bias initialization.
    pub init_bound: f64,
    pub jobs: usize,
}

impl Default for Exp1Options {
    fn default() -> Self {
        Self {
            trials: 100,
            seed: 0,
            lr: 0.1,
            epochs: 500,
            optimizer: Optimizer::SubgradDescent,
            init_bound: EXP1_INIT_BOUND,
            jobs: 1,
        }
    }
}

/// Biases start at zero, so `f(0)` starts with every class tied.
pub const EXP1_INIT_BOUND: f64 = 0.0;

/// ψ1–ψ5 at k = 2 on the tail-heavy constant-input data.
pub fn cmd_exp1(opts: &Exp1Options) -> Result<RunResult> {
    if opts.trials == 0 {
        return Err(CliError::Arg("need at least one trial".into()));
    }
    let start = Instant::now();
    let data = gen_exp1();
    let losses: Vec<LossSpec> = LossFamily::HINGE.iter().map(|&f| LossSpec::new(f, 2)).collect();
    let work: Vec<(usize, LossSpec)> = (0..opts.trials)
        .flat_map(|t| losses.iter().map(move |&l| (t, l)))
        .collect();
    let records = pool(opts.jobs)?.install(|| {
        work.par_iter()
            .map(|&(trial, loss)| -> Result<TrialRecord> {
                let seed = derive_seed(opts.seed, trial as u64);
                let cfg = TrainConfig {
                    optimizer: opts.optimizer,
                    lr: opts.lr,
                    epochs: opts.epochs,
                    seed,
                    init: if opts.init_bound > 0.0 {
                        Init::Uniform { bound: opts.init_bound }
                    } else {
                        Init::Zero
                    },
                    ..TrainConfig::default()
                };
                let rep = train_linear(&loss, &data, &cfg)?;
                Ok(TrialRecord {
                    trial,
                    seed,
                    loss: loss.family.name().into(),
                    top_k: top_k_accuracy(&rep.model, &data, 2, TieBreakPolicy::WorstCaseForLabel)?,
                    top1: top_k_accuracy(&rep.model, &data, 1, TieBreakPolicy::WorstCaseForLabel)?,
                    surrogate: rep.final_loss,
                    unstable: rep.unstable,
                    scores_at_zero: Some(rep.model.scores(&[0.0, 0.0])),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(RunResult {
        schema_version: SCHEMA_VERSION,
        command: "exp1".into(),
        parameters: json!({
            "k": 2, "lr": opts.lr, "epochs": opts.epochs,
            "optimizer": opts.optimizer, "init_bound": opts.init_bound,
        }),
        seed: opts.seed,
        trials: opts.trials,
        metrics: aggregate(&losses, &records),
        records,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// The nine losses of the mixture experiments at the given k.
pub fn mixture_losses(k: usize) -> Vec<LossSpec> {
    LossFamily::ALL
        .iter()
        .filter(|&&f| f != LossFamily::Cd)
        .map(|&f| LossSpec::new(f, if f.uses_k() { k } else { 1 }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureOptions {
    pub trials: usize,
    pub seed: u64,
    /// Losses to train; all nine when empty.
    pub losses: Vec<LossFamily>,
    pub train: TrainConfig,
    pub jobs: usize,
}

impl Default for MixtureOptions {
    fn default() -> Self {
        Self {
            trials: 10,
            seed: 0,
            losses: Vec::new(),
            train: TrainConfig::default(),
            jobs: 1,
        }
    }
}

fn run_mixture(
    command: &str,
    parameters: Value,
    eval_k: usize,
    loss_k: usize,
    opts: &MixtureOptions,
    make: impl Fn(u64) -> topk_core::Result<(Dataset, Dataset)> + Sync,
) -> Result<RunResult> {
    if opts.trials == 0 {
        return Err(CliError::Arg("need at least one trial".into()));
    }
    let start = Instant::now();
    let losses: Vec<LossSpec> = mixture_losses(loss_k)
        .into_iter()
        .filter(|l| opts.losses.is_empty() || opts.losses.contains(&l.family))
        .collect();
    let records = pool(opts.jobs)?.install(|| {
        (0..opts.trials)
            .into_par_iter()
            .map(|trial| -> Result<Vec<TrialRecord>> {
                let seed = derive_seed(opts.seed, trial as u64);
                let (train, test) = make(seed)?;
                losses
                    .par_iter()
                    .map(|loss| {
                        let cfg = TrainConfig { seed, ..opts.train };
                        let rep = train_linear(loss, &train, &cfg)?;
                        Ok(TrialRecord {
                            trial,
                            seed,
                            loss: loss.family.name().into(),
                            top_k: top_k_accuracy(&rep.model, &test, eval_k, TieBreakPolicy::WorstCaseForLabel)?,
                            top1: top_k_accuracy(&rep.model, &test, 1, TieBreakPolicy::WorstCaseForLabel)?,
                            surrogate: topk_core::optim::mean_loss(loss, &rep.model, &test)?,
                            unstable: rep.unstable,
                            scores_at_zero: None,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let records: Vec<TrialRecord> = records.into_iter().flatten().collect();
    Ok(RunResult {
        schema_version: SCHEMA_VERSION,
        command: command.into(),
        parameters,
        seed: opts.seed,
        trials: opts.trials,
        metrics: aggregate(&losses, &records),
        records,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Overlapping-mixture experiment: losses at `k`, evaluated by top-5
/// accuracy and accuracy on the test split.
pub fn cmd_exp2(params: &Exp2Params, k: usize, opts: &MixtureOptions) -> Result<RunResult> {
    let parameters = json!({ "data": params, "k": k, "train": opts.train });
    run_mixture("exp2", parameters, 5, k, opts, |seed| gen_exp2(params, seed))
}

/// Separated-cluster experiment: losses at the data's `k`.
pub fn cmd_exp3(params: &Exp3Params, opts: &MixtureOptions) -> Result<RunResult> {
    let parameters = json!({ "data": params, "train": opts.train });
    run_mixture("exp3", parameters, 5, params.k, opts, |seed| gen_exp3(params, seed))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeOutput {
    pub schema_version: u32,
    pub command: &'static str,
    pub report: CalibrationReport,
}

pub fn cmd_probe(loss: LossSpec, eta: &CondDist, k: usize, cfg: &MinimizeConfig) -> Result<ProbeOutput> {
    Ok(ProbeOutput {
        schema_version: SCHEMA_VERSION,
        command: "probe",
        report: calibration_probe(&loss, eta, k, cfg)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanOutput {
    pub schema_version: u32,
    pub command: &'static str,
    pub loss: LossSpec,
    pub k: usize,
    pub m: usize,
    pub seed: u64,
    pub violation_count: usize,
    pub outcome: ScanOutcome,
}

pub fn cmd_scan(loss: LossSpec, k: usize, m: usize, draws: usize, seed: u64, cfg: &MinimizeConfig) -> Result<ScanOutput> {
    let outcome = calibration_scan(&loss, k, m, draws, seed, cfg)?;
    Ok(ScanOutput {
        schema_version: SCHEMA_VERSION,
        command: "scan",
        loss,
        k,
        m,
        seed,
        violation_count: outcome.violations.len(),
        outcome,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdOutput {
    pub schema_version: u32,
    pub command: &'static str,
    pub result: CdCounterexample,
}

pub fn cmd_cd() -> Result<CdOutput> {
    Ok(CdOutput {
        schema_version: SCHEMA_VERSION,
        command: "cd",
        result: cd_counterexample()?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GenKind {
    Exp1,
    Exp2,
    Exp3,
    LinearSep,
}

/// Generates the requested dataset(s); mixture kinds give train and test.
pub fn cmd_gen(kind: GenKind, n_means: usize, seed: u64) -> Result<Vec<(String, Dataset)>> {
    Ok(match kind {
        GenKind::Exp1 => vec![("exp1".into(), gen_exp1())],
        GenKind::LinearSep => vec![("linear_sep".into(), topk_core::synth::gen_linear_sep_dataset())],
        GenKind::Exp2 => {
            let (a, b) = gen_exp2(&Exp2Params::with_means(n_means), seed)?;
            vec![("train".into(), a), ("test".into(), b)]
        }
        GenKind::Exp3 => {
            let (a, b) = gen_exp3(&Exp3Params::with_means(n_means), seed)?;
            vec![("train".into(), a), ("test".into(), b)]
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckRow {
    pub loss: String,
    pub samples: usize,
    /// Largest `|g_i − fd_i| / max(|g_i|, |fd_i|, 1)` seen.
    pub max_rel_err: f64,
    pub passed: bool,
}

/// Relative-error tolerance of the finite-difference comparison.
pub const GRAD_CHECK_TOL: f64 = 1e-5;
/// Central-difference step.
pub const GRAD_CHECK_H: f64 = 1e-6;

/// Whether `loss(·, y)` is differentiable on a box of radius `4h` around
/// `s`: hinge subgradients are piecewise constant, so they must not change
/// along any axis. Smooth families always pass.
pub fn smooth_near(loss: &LossSpec, s: &[f64], y: usize, h: f64) -> bool {
    if !loss.family.is_hinge() {
        return true;
    }
    let Ok(base) = loss.subgrad(s, y) else {
        return false;
    };
    let mut p = s.to_vec();
    for i in 0..s.len() {
        for step in [4.0 * h, -4.0 * h] {
            p[i] = s[i] + step;
            if loss.subgrad(&p, y).ok().as_deref() != Some(&base[..]) {
                return false;
            }
        }
        p[i] = s[i];
    }
    true
}

/// Standard-normal scores (scale 2) with all pairwise gaps above `gap`.
pub fn tie_free_scores(rng: &mut impl Rng, m: usize, gap: f64) -> Vec<f64> {
    use rand_distr::StandardNormal;
    loop {
        let s: Vec<f64> = (0..m).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        if (0..m).all(|i| (0..i).all(|j| (s[i] - s[j]).abs() > gap)) {
            return s;
        }
    }
}

/// Compares subgradients with central differences at random tie-free
/// points for every family, cycling through `ms` and every valid k.
pub fn cmd_grad_check(ms: &[usize], samples: usize, seed: u64) -> Result<Vec<GradCheckRow>> {
    if ms.is_empty() || ms.iter().any(|&m| m < 3) {
        return Err(CliError::Arg("class counts must be at least 3".into()));
    }
    let mut rows = Vec::new();
    for (fi, &family) in LossFamily::ALL.iter().enumerate() {
        let mut rng = rng_from_seed(derive_seed(seed, fi as u64));
        let mut worst: f64 = 0.0;
        let mut done = 0;
        while done < samples {
            let m = ms[done % ms.len()];
            let k = if family.uses_k() { 1 + done % (m - 1) } else { 1 };
            let loss = LossSpec::new(family, k);
            let s = tie_free_scores(&mut rng, m, 1e-3);
            let y = rng.random_range(0..m);
            if !smooth_near(&loss, &s, y, GRAD_CHECK_H) {
                continue;
            }
            let g = loss.subgrad(&s, y)?;
            let fd = finite_diff_grad(|v| loss.eval(v, y).unwrap_or(f64::NAN), &s, GRAD_CHECK_H)?;
            for (a, b) in g.iter().zip(&fd) {
                worst = worst.max(rel_err(*a, *b));
            }
            done += 1;
        }
        rows.push(GradCheckRow {
            loss: family.name().into(),
            samples,
            max_rel_err: worst,
            passed: worst < GRAD_CHECK_TOL,
        });
    }
    Ok(rows)
}

/// `|a − b| / max(|a|, |b|, 1)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}
