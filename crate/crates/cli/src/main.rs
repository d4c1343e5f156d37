use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use topk_cli::{
    cmd_cd, cmd_exp1, cmd_exp2, cmd_exp3, cmd_gen, cmd_grad_check, cmd_probe, cmd_scan, CliError,
    Exp1Options, GenKind, EXP1_INIT_BOUND, MixtureOptions, Result, RunResult,
};
use topk_core::losses::{LossFamily, LossSpec};
use topk_core::optim::{Optimizer, TrainConfig};
use topk_core::parse::parse_eta;
use topk_core::risk::MinimizeConfig;
use topk_core::synth::{Exp2Params, Exp3Params, DEFAULT_EXP2_CLASSES, DEFAULT_MEAN_SPREAD};

#[derive(Parser)]
#[command(name = "topk", version, about = "Top-k surrogate loss experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Write JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the metrics table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct Search {
    #[arg(long, default_value_t = 16)]
    restarts: usize,
    #[arg(long, default_value_t = 5000)]
    iterations: usize,
    #[arg(long, default_value_t = 1.0)]
    initial_step: f64,
}

impl Search {
    fn config(&self, seed: u64) -> MinimizeConfig {
        MinimizeConfig {
            restarts: self.restarts,
            iterations: self.iterations,
            initial_step: self.initial_step,
            seed,
            ..MinimizeConfig::default()
        }
    }
}

#[derive(Args, Clone)]
struct Training {
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    /// Restrict to these losses (comma-separated names).
    #[arg(long, value_delimiter = ',')]
    losses: Vec<LossFamily>,
}

#[derive(Subcommand)]
enum Command {
    /// Hinge losses on the constant-input, tail-heavy data.
    Exp1 {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 500)]
        epochs: usize,
        #[arg(long, value_enum, default_value_t = OptimizerArg::Sgd)]
        optimizer: OptimizerArg,
        /// Half-width of the uniform bias initialization.
        #[arg(long = "init-bound", default_value_t = EXP1_INIT_BOUND)]
        init_bound: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Overlapping Gaussian mixtures.
    Exp2 {
        #[arg(long = "n-means", default_value_t = 10)]
        n_means: usize,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Number of classes.
        #[arg(long, default_value_t = DEFAULT_EXP2_CLASSES)]
        m: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 2.0)]
        separation: f64,
        #[arg(long, default_value_t = DEFAULT_MEAN_SPREAD)]
        spread: f64,
        #[arg(long = "means-per-class", default_value_t = 5)]
        means_per_class: usize,
        #[arg(long = "train-per-class", default_value_t = 40)]
        train_per_class: usize,
        #[arg(long = "test-per-class", default_value_t = 7)]
        test_per_class: usize,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[command(flatten)]
        training: Training,
        #[command(flatten)]
        common: Common,
    },
    /// Separated clusters, k indistinguishable classes per cluster.
    Exp3 {
        #[arg(long = "n-means", default_value_t = 10)]
        n_means: usize,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 5)]
        dim: usize,
        #[arg(long, default_value_t = 2.0)]
        separation: f64,
        #[arg(long, default_value_t = DEFAULT_MEAN_SPREAD)]
        spread: f64,
        #[arg(long = "train-per-class", default_value_t = 20)]
        train_per_class: usize,
        #[arg(long = "test-per-class", default_value_t = 7)]
        test_per_class: usize,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[command(flatten)]
        training: Training,
        #[command(flatten)]
        common: Common,
    },
    /// Is the numeric minimizer of the conditional risk top-k preserving?
    Probe {
        #[arg(long)]
        loss: LossFamily,
        #[arg(long)]
        k: usize,
        /// Inline list such as `1/8,1/8,1/12x9`.
        #[arg(long, conflicts_with = "eta_file", required_unless_present = "eta_file")]
        eta: Option<String>,
        #[arg(long = "eta-file")]
        eta_file: Option<PathBuf>,
        /// Rescale η to sum to 1 instead of rejecting it.
        #[arg(long)]
        normalize: bool,
        #[command(flatten)]
        search: Search,
        #[command(flatten)]
        common: Common,
    },
    /// Probe Dirichlet draws and the tail-heavy family; report violations.
    Scan {
        #[arg(long)]
        loss: LossFamily,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 1000)]
        draws: usize,
        #[command(flatten)]
        search: Search,
        #[command(flatten)]
        common: Common,
    },
    /// Gradient descent on the CD conditional risk.
    Cd {
        #[command(flatten)]
        common: Common,
    },
    /// Write a dataset as CSV plus a JSON sidecar.
    Gen {
        #[arg(long, value_enum)]
        dataset: Dataset,
        #[arg(long = "n-means", default_value_t = 10)]
        n_means: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path; mixture datasets get `-train`/`-test` suffixes.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare subgradients with central finite differences.
    GradCheck {
        #[arg(long, value_delimiter = ',', default_values_t = [3, 5, 8])]
        m: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Sgd,
    Adam,
}

impl From<OptimizerArg> for Optimizer {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Sgd => Optimizer::SubgradDescent,
            OptimizerArg::Adam => Optimizer::Adam,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Dataset {
    Exp1,
    Exp2,
    Exp3,
    LinearSep,
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn emit_json(common: &Common, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(common.out.as_deref(), &text)
}

fn emit_run(common: &Common, run: &RunResult) -> Result<()> {
    write_text(common.out.as_deref(), &run.to_json_lines()?)?;
    if let Some(path) = &common.csv {
        fs::write(path, run.metrics_csv()?)?;
    }
    Ok(())
}

fn train_config(t: &Training) -> TrainConfig {
    TrainConfig {
        lr: t.lr,
        epochs: t.epochs,
        ..TrainConfig::default()
    }
}

fn mixture_options(trials: usize, t: &Training, c: &Common) -> MixtureOptions {
    MixtureOptions {
        trials,
        seed: c.seed,
        losses: t.losses.clone(),
        train: train_config(t),
        jobs: c.jobs,
    }
}

fn suffixed(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    path.with_file_name(format!("{stem}-{tag}.{ext}"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Exp1 {
            trials,
            lr,
            epochs,
            optimizer,
            init_bound,
            common,
        } => {
            let opts = Exp1Options {
                trials,
                seed: common.seed,
                lr,
                epochs,
                optimizer: optimizer.into(),
                init_bound,
                jobs: common.jobs,
            };
            emit_run(&common, &cmd_exp1(&opts)?)
        }
        Command::Exp2 {
            n_means,
            k,
            m,
            dim,
            separation,
            spread,
            means_per_class,
            train_per_class,
            test_per_class,
            trials,
            training,
            common,
        } => {
            let params = Exp2Params {
                n_means,
                dim,
                separation,
                mean_spread: spread,
                means_per_class,
                train_per_class,
                test_per_class,
                num_classes: m,
            };
            let opts = mixture_options(trials, &training, &common);
            emit_run(&common, &cmd_exp2(&params, k, &opts)?)
        }
        Command::Exp3 {
            n_means,
            k,
            dim,
            separation,
            spread,
            train_per_class,
            test_per_class,
            trials,
            training,
            common,
        } => {
            let params = Exp3Params {
                n_means,
                dim,
                separation,
                mean_spread: spread,
                k,
                train_per_class,
                test_per_class,
            };
            let opts = mixture_options(trials, &training, &common);
            emit_run(&common, &cmd_exp3(&params, &opts)?)
        }
        Command::Probe {
            loss,
            k,
            eta,
            eta_file,
            normalize,
            search,
            common,
        } => {
            let text = match (eta, eta_file) {
                (Some(t), _) => t,
                (None, Some(p)) => fs::read_to_string(p)?,
                (None, None) => return Err(CliError::Arg("need --eta or --eta-file".into())),
            };
            let eta = parse_eta(&text, normalize)?;
            let spec = LossSpec::new(loss, if loss.uses_k() { k } else { 1 });
            emit_json(&common, &cmd_probe(spec, &eta, k, &search.config(common.seed))?)
        }
        Command::Scan {
            loss,
            k,
            m,
            draws,
            search,
            common,
        } => {
            let spec = LossSpec::new(loss, if loss.uses_k() { k } else { 1 });
            let out = cmd_scan(spec, k, m, draws, common.seed, &search.config(common.seed))?;
            emit_json(&common, &out)
        }
        Command::Cd { common } => emit_json(&common, &cmd_cd()?),
        Command::Gen {
            dataset,
            n_means,
            seed,
            out,
        } => {
            let kind = match dataset {
                Dataset::Exp1 => GenKind::Exp1,
                Dataset::Exp2 => GenKind::Exp2,
                Dataset::Exp3 => GenKind::Exp3,
                Dataset::LinearSep => GenKind::LinearSep,
            };
            let sets = cmd_gen(kind, n_means, seed)?;
            let single = sets.len() == 1;
            for (tag, data) in sets {
                let path = if single { out.clone() } else { suffixed(&out, &tag) };
                data.save(&path)?;
                eprintln!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::GradCheck { m, samples, common } => {
            let rows = cmd_grad_check(&m, samples, common.seed)?;
            emit_json(&common, &rows)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
