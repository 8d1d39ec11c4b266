mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use srddl_core::data::{load_cohort, save_cohort, LaplacianMode, SynthConfig};
use srddl_core::trainer::{cross_validate, fit, load_checkpoint, predict, save_checkpoint, Method, CHECKPOINT_FILE};

use config::{HyperArgs, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "srddl", version, about = "Structurally-regularized dynamic dictionary learning with an LSTM-attention head")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic cohort and its ground truth.
    Simulate(SimulateArgs),
    /// Fit the coupled model and write a checkpoint.
    Train(TrainArgs),
    /// Predict severity scores for every subject of a cohort.
    Predict(PredictArgs),
    /// K-fold cross-validation against optional baselines.
    Crossval(CrossvalArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LaplacianArg {
    Identity,
    Random,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    p: usize,
    #[arg(long = "k-true", default_value_t = 5)]
    k_true: usize,
    #[arg(long, default_value_t = 12)]
    n: usize,
    /// Windows per subject (lower end when --t-max is given).
    #[arg(long, default_value_t = 20)]
    t: usize,
    #[arg(long = "t-max")]
    t_max: Option<usize>,
    #[arg(long, default_value_t = 3)]
    m: usize,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long = "score-noise", default_value_t = 0.0)]
    score_noise: f64,
    #[arg(long = "score-scale", default_value_t = 10.0)]
    score_scale: f64,
    #[arg(long, value_enum, default_value_t = LaplacianArg::Identity)]
    laplacian: LaplacianArg,
    /// Edge density for --laplacian random.
    #[arg(long, default_value_t = 0.3)]
    density: f64,
    #[arg(long = "missing-dti", default_value_t = 0)]
    missing_dti: usize,
    #[arg(long = "missing-score-prob", default_value_t = 0.0)]
    missing_score_prob: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Checkpoint archive, or a directory holding checkpoint.tar.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CrossvalArgs {
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long, value_enum)]
    baseline: Option<config::Baseline>,
    #[command(flatten)]
    hyper: HyperArgs,
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let config = SynthConfig {
        p: args.p,
        k_true: args.k_true,
        n: args.n,
        t_min: args.t,
        t_max: args.t_max.unwrap_or(args.t),
        m: args.m,
        noise: args.noise,
        score_noise: args.score_noise,
        score_scale: args.score_scale,
        laplacian: match args.laplacian {
            LaplacianArg::Identity => LaplacianMode::Identity,
            LaplacianArg::Random => LaplacianMode::RandomGraph { density: args.density },
        },
        missing_dti: args.missing_dti,
        missing_score_prob: args.missing_score_prob,
    };
    config.validate()?;
    let (cohort, truth) = srddl_core::data::generate_synthetic_cohort(&config, args.seed)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let manifest = save_cohort(&cohort, &args.out)?;
    output::write_truth(&args.out.join("truth"), &config, args.seed, &cohort, &truth)?;
    let lengths: Vec<usize> = cohort.subjects.iter().map(|s| s.connectome.len()).collect();
    println!(
        "wrote {}: N = {}, P = {}, T_n = {}..{}, K_true = {}",
        manifest.display(),
        cohort.len(),
        cohort.p,
        lengths.iter().min().unwrap_or(&0),
        lengths.iter().max().unwrap_or(&0),
        config.k_true
    );
    Ok(())
}

fn train(args: &TrainArgs) -> Result<()> {
    let run = RunConfig::resolve(&args.hyper, None, None)?;
    let cohort = load_cohort(&args.cohort)?;
    run.hyper.validate(cohort.p)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    run.write(&args.out.join("run_config.json"))?;
    let model = fit(&cohort, &run.hyper)?;
    let ckpt = args.out.join(CHECKPOINT_FILE);
    save_checkpoint(&model, &ckpt)?;
    output::write_history(&args.out.join("history.csv"), None, &model.history)?;
    let mut preds = Vec::with_capacity(cohort.len());
    for s in &cohort.subjects {
        preds.push((s.id().to_string(), predict(s, &model)?));
    }
    output::write_predictions(&args.out.join("train_predictions.csv"), &cohort.score_names, &preds)?;
    output::write_attention(&args.out.join("attention.csv"), &preds)?;
    let last = model.last_record();
    println!(
        "trained {} outer iterations (converged: {}): sr-DDL loss {:.4e}, network loss {:.4e}, residual {:.2e}; checkpoint {}",
        last.iteration,
        model.converged,
        last.srddl_loss,
        last.network_loss,
        last.residual,
        ckpt.display()
    );
    Ok(())
}

fn checkpoint_path(model: &Path) -> PathBuf {
    if model.is_dir() {
        model.join(CHECKPOINT_FILE)
    } else {
        model.to_path_buf()
    }
}

fn predict_cmd(args: &PredictArgs) -> Result<()> {
    let model = load_checkpoint(&checkpoint_path(&args.model))?;
    let cohort = load_cohort(&args.cohort)?;
    if cohort.p != model.p() {
        bail!("cohort has P = {} but the model was trained with P = {}", cohort.p, model.p());
    }
    if cohort.score_names != model.score_names {
        bail!("cohort scores {:?} differ from the model's {:?}", cohort.score_names, model.score_names);
    }
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut preds = Vec::with_capacity(cohort.len());
    for s in &cohort.subjects {
        preds.push((s.id().to_string(), predict(s, &model)?));
    }
    output::write_predictions(&args.out.join("predictions.csv"), &model.score_names, &preds)?;
    output::write_attention(&args.out.join("attention.csv"), &preds)?;
    output::write_loadings(&args.out.join("loadings.csv"), &preds)?;
    println!("predicted {} subjects into {}", preds.len(), args.out.display());
    Ok(())
}

fn crossval(args: &CrossvalArgs) -> Result<()> {
    let run = RunConfig::resolve(&args.hyper, args.folds, args.baseline)?;
    let cohort = load_cohort(&args.cohort)?;
    run.hyper.validate(cohort.p)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    run.write(&args.out.join("run_config.json"))?;
    let baselines: Vec<Method> = run.baseline.methods();
    let report = cross_validate(&cohort, &run.hyper, run.folds, run.hyper.seed, &baselines)?;
    output::write_crossval(&args.out, &report)?;
    for row in &report.pooled.rows {
        println!(
            "{:<12} {:<12} MAE {:>10} MI {:>8}",
            row.method,
            row.score,
            row.mae.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
            row.mi.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
        );
    }
    println!("wrote cross-validation results to {}", args.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Crossval(a) => crossval(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SRDDL_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
