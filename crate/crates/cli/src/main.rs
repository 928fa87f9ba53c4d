//! Command line for the constrained-surrogate workspace.
//!
//! Subcommands: `generate` (synthetic datasets), `train` (one mode on one
//! dataset), `evaluate` (checkpoint vs dataset), `experiment` (the full
//! repeated-seed comparison), `verify` (invariant self-checks).

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use kktnn::data::{self, TaskName};
use kktnn::harness::{self, DataConfig, ExperimentConfig};
use kktnn::{evaluate, train, Activation, Mlp, TrainConfig, TrainMode};

#[derive(Parser)]
#[command(name = "kktnn", version, about = "Surrogate MLP training under hard linear equality constraints", long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (CSV + manifest)
    Generate(GenerateArgs),
    /// Train one model on a dataset and write a checkpoint + run report
    Train(TrainArgs),
    /// Evaluate a checkpoint against a dataset
    Evaluate(EvaluateArgs),
    /// Run the full mode x holdout x repeat comparison protocol
    Experiment(ExperimentArgs),
    /// Run the projection/gradient/data invariant suite
    Verify,
}

#[derive(Args)]
struct GenerateArgs {
    /// Task: cstr, plant, or distillation
    #[arg(long)]
    task: String,
    /// Sample count (default: the task's standard size)
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Std of Gaussian noise injected along the constraint nullspace
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Output CSV path; the manifest lands next to it
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset CSV (with its manifest next to it)
    #[arg(long)]
    data: PathBuf,
    /// nn, pinn, kkt_hpinn, or nn_post
    #[arg(long)]
    mode: String,
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    #[arg(long = "batch-size", default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Penalty weight for pinn
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction held out as the test set
    #[arg(long, default_value_t = 0.2)]
    holdout: f64,
    /// relu or tanh
    #[arg(long, default_value = "relu")]
    activation: String,
    /// Output directory for model.json and the run report
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Model checkpoint written by `train`
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Evaluation mode (decides whether predictions are projected)
    #[arg(long, default_value = "nn")]
    mode: String,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Task to generate data for (ignored when --data is given)
    #[arg(long)]
    task: Option<String>,
    /// Use an existing dataset instead of generating one
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated mode list
    #[arg(long, value_delimiter = ',', default_value = "nn,pinn,kkt_hpinn,nn_post")]
    mode: Vec<String>,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    /// Comma-separated holdout fractions
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.2, 0.3, 0.4])]
    holdout: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    #[arg(long = "batch-size", default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sample count when generating (default: the task's standard size)
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value = "relu")]
    activation: String,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Experiment(args) => cmd_experiment(args),
        Command::Verify => cmd_verify(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn parse_task(s: &str) -> Result<TaskName> {
    Ok(s.parse::<TaskName>()?)
}

fn parse_mode(s: &str, lambda: f64) -> Result<TrainMode> {
    Ok(TrainMode::from_tag(s, lambda)?)
}

fn parse_activation(s: &str) -> Result<Activation> {
    Ok(s.parse::<Activation>()?)
}

fn cmd_generate(args: GenerateArgs) -> Result<ExitCode> {
    let task = parse_task(&args.task)?;
    let def = data::task_def(task)?;
    let n = args.n.unwrap_or(def.default_samples);
    let ds = data::generate(task, n, args.seed, args.noise)
        .with_context(|| format!("generating {n} samples for {task}"))?;
    let (kept, stats) = data::filter_feasible(&ds, def.tolerance)?;
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    data::write_csv(&args.out, &kept)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "wrote {} rows ({} filtered) to {} at tolerance {:e}",
        stats.retained,
        stats.dropped,
        args.out.display(),
        def.tolerance
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode> {
    let mode = parse_mode(&args.mode, args.lambda)?;
    let activation = parse_activation(&args.activation)?;
    let raw = data::read_csv(&args.data)
        .with_context(|| format!("reading {}", args.data.display()))?;
    let (filtered, _) = data::filter_feasible(&raw, raw.tolerance())?;
    let scaled = data::fit_maxabs(&filtered)?;
    let (trainval, test) = scaled.split_holdout(args.holdout, args.seed ^ 0x484f4c44)?;

    let width = data::task_def(scaled.task()).map(|d| d.hidden_width).unwrap_or(32);
    let dims = vec![scaled.input_dim(), width, width, scaled.output_dim()];
    let net = Mlp::init(&dims, activation, args.seed)?;
    let cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.lr,
        seed: args.seed,
        validation_fraction: 0.2,
    };
    let (trained, mut report) = train(net, &mode, &trainval, &cfg)?;
    report.final_test = Some(evaluate(&trained, &mode, &test)?);

    fs::create_dir_all(&args.out)?;
    let model_path = args.out.join("model.json");
    trained.save(&model_path)?;
    report.write_csv(&args.out.join(format!("run_{}.csv", mode.tag())))?;
    report.write_json(&args.out.join(format!("run_{}.json", mode.tag())))?;
    println!(
        "trained {} for {} epochs; test metrics: {}",
        mode.tag(),
        args.epochs,
        serde_json::to_string(&report.final_test)?
    );
    println!("checkpoint: {}", model_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<ExitCode> {
    let mode = parse_mode(&args.mode, args.lambda)?;
    let net = Mlp::load(&args.model)
        .with_context(|| format!("loading {}", args.model.display()))?;
    let raw = data::read_csv(&args.data)
        .with_context(|| format!("reading {}", args.data.display()))?;
    // evaluation happens in the dataset's own max-abs scaled space
    let scaled = data::fit_maxabs(&raw)?;
    let metrics = evaluate(&net, &mode, &scaled)?;
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_experiment(args: ExperimentArgs) -> Result<ExitCode> {
    let activation = parse_activation(&args.activation)?;
    let modes = args
        .mode
        .iter()
        .map(|m| parse_mode(m, args.lambda))
        .collect::<Result<Vec<_>>>()?;
    let train_cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.lr,
        seed: args.seed,
        validation_fraction: 0.2,
    };

    let summary = if let Some(path) = &args.data {
        let raw = data::read_csv(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg = ExperimentConfig {
            data: DataConfig {
                task: raw.task(),
                n: raw.len(),
                seed: args.seed,
                noise_std: args.noise,
            },
            modes,
            n_repeats: args.repeats,
            holdout_fractions: args.holdout.clone(),
            train: train_cfg,
            hidden_dims: None,
            activation,
        };
        harness::run_experiment_on(&cfg, &raw, &args.out)?
    } else {
        let Some(task_str) = &args.task else {
            bail!("either --task or --data is required");
        };
        let task = parse_task(task_str)?;
        let def = data::task_def(task)?;
        let cfg = ExperimentConfig {
            data: DataConfig {
                task,
                n: args.n.unwrap_or(def.default_samples),
                seed: args.seed,
                noise_std: args.noise,
            },
            modes,
            n_repeats: args.repeats,
            holdout_fractions: args.holdout.clone(),
            train: train_cfg,
            hidden_dims: None,
            activation,
        };
        harness::run_experiment(&cfg, &args.out)?
    };

    print!("{}", summary.to_text());
    println!("summary: {}", args.out.join("summary.json").display());
    Ok(if summary.incomplete {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_verify() -> Result<ExitCode> {
    let checks = harness::verify_suite();
    let mut all_ok = true;
    for check in &checks {
        if check.passed {
            println!("ok   {} — {}", check.name, check.detail);
        } else {
            println!("FAIL {} — {}", check.name, check.detail);
            all_ok = false;
        }
    }
    if all_ok {
        println!("all {} invariant checks passed", checks.len());
        Ok(ExitCode::SUCCESS)
    } else {
        bail!("invariant checks failed")
    }
}
