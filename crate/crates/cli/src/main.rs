//! Experiment runner: train a bid strategy, sweep temperatures, tabulate the
//! closed-form error oracle, or measure gradient-estimate variance. Every
//! command writes CSV artifacts plus a `manifest.json` snapshot of the fully
//! resolved configuration.

mod config_file;
mod csv_out;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use smoothmkt::estimators::{gradient_variance, EstimatorConfig, EstimatorKind};
use smoothmkt::learner::{lambda_sweep, pretrained_policy, run_training, ExperimentConfig};
use smoothmkt::mechanisms::{MechanismSpec, PaymentRule};
use smoothmkt::oracle::{oracle_grid, LinearOpponent};
use smoothmkt::smoothing::SmoothingConfig;

use config_file::ConfigFile;
use csv_out::{
    fmt_f64, fmt_opt, write_csv, CSV_SCHEMA_VERSION, METRICS_HEADER, ORACLE_HEADER, SWEEP_HEADER,
    VARIANCE_HEADER,
};

#[derive(Parser)]
#[command(name = "smoothmkt", version, about = "Equilibrium learning in sealed-bid auctions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one self-play training experiment and write metrics.csv.
    Train(TrainArgs),
    /// One training run per temperature (and seed); writes sweep.csv.
    Sweep(SweepArgs),
    /// Closed-form vs quadrature vs bound error table; writes oracle.csv.
    Oracle(OracleArgs),
    /// Gradient-estimate variance over a temperature grid; writes variance.csv.
    Variance(VarianceArgs),
}

/// Flags shared by the experiment-running subcommands. Every flag overrides
/// the config file, which overrides the built-in defaults.
#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Payment rule: fpsb or spsb.
    #[arg(long)]
    mechanism: Option<String>,
    /// Number of bidders.
    #[arg(long)]
    bidders: Option<usize>,
    /// Number of separately sold items.
    #[arg(long)]
    items: Option<usize>,
    /// Gradient estimator: sm, es, or reinforce.
    #[arg(long)]
    estimator: Option<String>,
    /// Softmax temperature of the surrogate game (sm).
    #[arg(long)]
    lambda: Option<f64>,
    /// Population size (es).
    #[arg(long)]
    pop: Option<usize>,
    /// Base perturbation deviation, scaled by model size (es).
    #[arg(long)]
    sigma: Option<f64>,
    /// Valuation samples per iteration.
    #[arg(long)]
    batch: Option<usize>,
    /// Training iterations.
    #[arg(long)]
    iters: Option<usize>,
    /// Experiment seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Record metrics every this many iterations.
    #[arg(long = "eval-every")]
    eval_every: Option<usize>,
    /// Samples behind each L2 record.
    #[arg(long = "eval-batch")]
    eval_batch: Option<usize>,
    /// Ascent step size.
    #[arg(long)]
    lr: Option<f64>,
    /// Supervised pretraining iterations toward truthful bidding.
    #[arg(long = "pretrain-iters")]
    pretrain_iters: Option<usize>,
    /// Output directory for the CSV artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat key-value config file (same keys as the flags).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Estimate the worst-case utility loss after the final iteration.
    #[arg(long = "final-loss", default_value_t = true, action = clap::ArgAction::Set)]
    final_loss: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Comma-separated temperature grid.
    #[arg(long)]
    lambdas: Option<String>,
    /// Comma-separated seeds (defaults to the single --seed).
    #[arg(long)]
    seeds: Option<String>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    /// Comma-separated valuations of the learner (empty for a header-only table).
    #[arg(long)]
    v1s: Option<String>,
    /// Comma-separated temperatures (empty for a header-only table).
    #[arg(long)]
    lambdas: Option<String>,
    /// Linear opponent slope.
    #[arg(long)]
    slope: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VarianceArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Temperatures for the first-order estimator rows.
    #[arg(long)]
    lambdas: Option<String>,
    /// Estimators to measure (comma-separated subset of sm,es,reinforce).
    #[arg(long)]
    estimators: Option<String>,
    /// Independent estimates behind each variance value.
    #[arg(long)]
    repeats: Option<usize>,
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Train(args) => cmd_train(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Oracle(args) => cmd_oracle(args),
        Command::Variance(args) => cmd_variance(args),
    }
}

fn parse_f64_list(raw: &str) -> Result<Vec<f64>> {
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("bad number `{s}`")))
        .collect()
}

fn parse_u64_list(raw: &str) -> Result<Vec<u64>> {
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|s| s.trim().parse::<u64>().with_context(|| format!("bad seed `{s}`")))
        .collect()
}

/// Fully resolved experiment configuration plus the bits the manifest needs.
struct ResolvedExperiment {
    config: ExperimentConfig,
    out: PathBuf,
}

fn resolve_experiment(args: &ExperimentArgs) -> Result<ResolvedExperiment> {
    let file = match &args.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };

    let mechanism: String =
        file.resolve(args.mechanism.clone(), "mechanism", "fpsb".to_string())?;
    let payment_rule: PaymentRule = mechanism.parse()?;
    let bidders = file.resolve(args.bidders, "bidders", 2)?;
    let items = file.resolve(args.items, "items", 1)?;
    let spec = MechanismSpec::new(payment_rule, bidders, items)?;

    let estimator_name: String =
        file.resolve(args.estimator.clone(), "estimator", "sm".to_string())?;
    let kind: EstimatorKind = estimator_name.parse()?;
    let mut estimator = EstimatorConfig::new(kind);
    estimator.smoothing = SmoothingConfig::new(file.resolve(args.lambda, "lambda", 0.01)?)?;
    estimator.population_size = file.resolve(args.pop, "pop", 64)?;
    estimator.sigma = file.resolve(args.sigma, "sigma", 1.0)?;

    let mut config = ExperimentConfig::new(spec, estimator);
    config.batch_size = file.resolve(args.batch, "batch", config.batch_size)?;
    config.iterations = file.resolve(args.iters, "iters", config.iterations)?;
    config.seed = file.resolve(args.seed, "seed", config.seed)?;
    config.eval_every = file.resolve(args.eval_every, "eval-every", config.eval_every)?;
    config.eval_batch = file.resolve(args.eval_batch, "eval-batch", config.eval_batch)?;
    config.optimizer.step_size = file.resolve(args.lr, "lr", config.optimizer.step_size)?;
    config.pretrain_iterations =
        file.resolve(args.pretrain_iters, "pretrain-iters", config.pretrain_iterations)?;
    config.validate()?;

    let out = match &args.out {
        Some(path) => path.clone(),
        None => PathBuf::from(file.resolve(None, "out", "runs/latest".to_string())?),
    };
    Ok(ResolvedExperiment { config, out })
}

fn experiment_manifest(config: &ExperimentConfig) -> serde_json::Value {
    json!({
        "mechanism": config.mechanism.payment_rule.to_string(),
        "bidders": config.mechanism.n_bidders,
        "items": config.mechanism.n_items,
        "estimator": config.estimator.kind.to_string(),
        "lambda": config.estimator.smoothing.temperature,
        "pop": config.estimator.population_size,
        "sigma": config.estimator.sigma,
        "batch": config.batch_size,
        "iters": config.iterations,
        "seed": config.seed,
        "eval-every": config.eval_every,
        "eval-batch": config.eval_batch,
        "lr": config.optimizer.step_size,
        "pretrain-iters": config.pretrain_iterations,
        "pretrain-lr": config.pretrain_optimizer.step_size,
        "v-max": config.v_max,
    })
}

fn write_manifest(
    out_dir: &Path,
    command: &str,
    config_snapshot: serde_json::Value,
    artifacts: &[&str],
) -> Result<()> {
    let manifest = json!({
        "artifact_version": env!("CARGO_PKG_VERSION"),
        "csv_schema_version": CSV_SCHEMA_VERSION,
        "command": command,
        "config": config_snapshot,
        "outputs": artifacts,
    });
    let path = out_dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("cannot write {}", path.display()))
}

fn ensure_out_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)
        .with_context(|| format!("cannot create output directory {}", path.display()))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let ResolvedExperiment { mut config, out } = resolve_experiment(&args.experiment)?;
    config.final_utility_loss = args.final_loss;
    ensure_out_dir(&out)?;

    let run = run_training(&config)?;

    let rows: Vec<Vec<String>> = run
        .records
        .iter()
        .map(|r| {
            vec![
                r.iteration.to_string(),
                fmt_f64(r.l2),
                fmt_opt(r.utility_loss),
                fmt_opt(r.grad_variance),
                fmt_f64(r.seconds_per_iter),
            ]
        })
        .collect();
    write_csv(&out.join("metrics.csv"), METRICS_HEADER, &rows)?;
    run.net
        .save(&out.join("policy.txt"))
        .context("cannot write policy file")?;
    write_manifest(
        &out,
        "train",
        experiment_manifest(&config),
        &["metrics.csv", "policy.txt"],
    )?;

    if let Some(l2) = run.final_l2() {
        println!("final l2 {l2}");
    }
    println!("wrote {}", out.join("metrics.csv").display());
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let ResolvedExperiment { config, out } = resolve_experiment(&args.experiment)?;
    let file = match &args.experiment.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let lambdas = parse_f64_list(&file.resolve(
        args.lambdas.clone(),
        "lambdas",
        String::new(),
    )?)?;
    if lambdas.is_empty() {
        bail!("sweep needs a nonempty --lambdas list");
    }
    let seeds = {
        let raw: String = file.resolve(args.seeds.clone(), "seeds", String::new())?;
        let parsed = parse_u64_list(&raw)?;
        if parsed.is_empty() {
            vec![config.seed]
        } else {
            parsed
        }
    };
    ensure_out_dir(&out)?;

    let mut rows = Vec::new();
    for &seed in &seeds {
        let mut seeded = config.clone();
        seeded.seed = seed;
        for point in lambda_sweep(&seeded, &lambdas)? {
            rows.push(vec![
                fmt_f64(point.lambda),
                point.seed.to_string(),
                fmt_f64(point.final_l2),
            ]);
        }
    }
    write_csv(&out.join("sweep.csv"), SWEEP_HEADER, &rows)?;

    let mut snapshot = experiment_manifest(&config);
    snapshot["lambdas"] = json!(lambdas);
    snapshot["seeds"] = json!(seeds);
    write_manifest(&out, "sweep", snapshot, &["sweep.csv"])?;
    println!("wrote {}", out.join("sweep.csv").display());
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<()> {
    let file = match &args.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let v1s = parse_f64_list(&file.resolve(
        args.v1s.clone(),
        "v1s",
        "0.5,0.75,1.0".to_string(),
    )?)?;
    let lambdas = parse_f64_list(&file.resolve(
        args.lambdas.clone(),
        "lambdas",
        "0.1,0.01,0.001".to_string(),
    )?)?;
    let slope = file.resolve(args.slope, "slope", 0.5)?;
    let opponent = LinearOpponent::new(slope)?;
    let out = match &args.out {
        Some(path) => path.clone(),
        None => PathBuf::from(file.resolve(None, "out", "runs/oracle".to_string())?),
    };
    ensure_out_dir(&out)?;

    let rows: Vec<Vec<String>> = oracle_grid(&v1s, &lambdas, &opponent)?
        .into_iter()
        .map(|r| {
            vec![
                fmt_f64(r.v1),
                fmt_f64(r.b1),
                fmt_f64(r.lambda),
                fmt_f64(r.exact_error),
                fmt_f64(r.quadrature_error),
                fmt_f64(r.bound),
            ]
        })
        .collect();
    write_csv(&out.join("oracle.csv"), ORACLE_HEADER, &rows)?;
    write_manifest(
        &out,
        "oracle",
        json!({ "v1s": v1s, "lambdas": lambdas, "slope": slope }),
        &["oracle.csv"],
    )?;
    println!("wrote {}", out.join("oracle.csv").display());
    Ok(())
}

fn cmd_variance(args: VarianceArgs) -> Result<()> {
    let ResolvedExperiment { config, out } = resolve_experiment(&args.experiment)?;
    let file = match &args.experiment.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let lambdas = parse_f64_list(&file.resolve(
        args.lambdas.clone(),
        "lambdas",
        "0.05,0.01,0.002".to_string(),
    )?)?;
    let estimators: String = file.resolve(
        args.estimators.clone(),
        "estimators",
        "sm,es,reinforce".to_string(),
    )?;
    let repeats = file.resolve(args.repeats, "repeats", 10)?;
    ensure_out_dir(&out)?;

    let mut rows = Vec::new();
    for name in estimators.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let kind: EstimatorKind = name.parse()?;
        let mut est_config = config.clone();
        est_config.estimator.kind = kind;
        let net = pretrained_policy(&est_config)?;
        match kind {
            EstimatorKind::Sm => {
                for &lambda in &lambdas {
                    let mut cfg = est_config.estimator;
                    cfg.smoothing = SmoothingConfig::new(lambda)?;
                    let variance = gradient_variance(
                        &net,
                        &config.mechanism,
                        &cfg,
                        config.batch_size,
                        config.v_max,
                        repeats,
                        config.seed,
                    )?;
                    rows.push(vec![
                        kind.to_string(),
                        fmt_f64(lambda),
                        fmt_f64(variance),
                    ]);
                }
            }
            _ => {
                let variance = gradient_variance(
                    &net,
                    &config.mechanism,
                    &est_config.estimator,
                    config.batch_size,
                    config.v_max,
                    repeats,
                    config.seed,
                )?;
                rows.push(vec![kind.to_string(), String::new(), fmt_f64(variance)]);
            }
        }
    }
    write_csv(&out.join("variance.csv"), VARIANCE_HEADER, &rows)?;

    let mut snapshot = experiment_manifest(&config);
    snapshot["lambdas"] = json!(lambdas);
    snapshot["repeats"] = json!(repeats);
    snapshot["estimators"] = json!(estimators);
    write_manifest(&out, "variance", snapshot, &["variance.csv"])?;
    println!("wrote {}", out.join("variance.csv").display());
    Ok(())
}
