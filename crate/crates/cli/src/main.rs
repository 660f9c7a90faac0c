//! `newsrec` — news recommendation pipeline CLI.
//!
//! Every subcommand takes the same four flags: `--config <file>` for a
//! TOML config (with `include` support), repeated `--set path=value`
//! overrides, `--seed` as shorthand for `--set seed=N`, and `--out` for
//! the output directory. Exit codes: 0 success, 2 configuration error,
//! 3 data error, 4 numeric failure.

use clap::{Args, Parser, Subcommand};
use newsrec_core::config::{self, Resolved};
use newsrec_core::data::synthetic::generate_synthetic;
use newsrec_core::error::{Error, Result};
use newsrec_core::eval::{self, VectorCache};
use newsrec_core::experiment;
use newsrec_core::metrics::MetricsReport;
use newsrec_core::tensor::Scalar;
use newsrec_core::train::open_checkpoint;
use newsrec_core::zoo::Model;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "newsrec", version, about = "Train, evaluate, and analyze neural news recommenders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file; omit to run on built-in defaults
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Dotted-path override, repeatable: --set train.lr=0.001
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
    /// Override the top-level seed (applied after all --set flags)
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for artifacts
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the raw TSVs, build vocabulary and splits, and write the binary dataset cache
    Preprocess(RunArgs),
    /// Full pipeline: dataset, training, test evaluation, analysis artifacts
    Train(RunArgs),
    /// Evaluate a saved checkpoint on the test split
    Evaluate(RunArgs),
    /// Emit dataset statistics and recommendation-distribution artifacts
    Analyze(RunArgs),
    /// One training run per value of the configured sweep axis
    Sweep(RunArgs),
    /// Generate a synthetic planted-preference corpus
    Synth(RunArgs),
}

fn resolve(args: &RunArgs) -> Result<Resolved> {
    let mut sets = args.set.clone();
    if let Some(seed) = args.seed {
        sets.push(format!("seed={seed}"));
    }
    config::resolve(args.config.as_deref(), &sets)
}

fn metrics_line(r: &MetricsReport) -> String {
    format!(
        "auc {:.2}  mrr {:.2}  ndcg@5 {:.2}  ndcg@10 {:.2}  ({} impressions, {} skipped)",
        r.auc, r.mrr, r.ndcg_at_5, r.ndcg_at_10, r.n_evaluated, r.n_skipped
    )
}

fn checkpoint_path(resolved: &Resolved, out: &Path) -> PathBuf {
    if resolved.config.eval.checkpoint.is_empty() {
        out.join("model.ckpt")
    } else {
        PathBuf::from(&resolved.config.eval.checkpoint)
    }
}

fn cmd_preprocess(args: &RunArgs) -> Result<()> {
    let resolved = resolve(args)?;
    std::fs::create_dir_all(&args.out)?;
    let (_, summary) = experiment::load_or_build_dataset(&resolved.config, &args.out)?;
    let cache = experiment::cache_path(&resolved.config, &args.out);
    println!(
        "{} articles, {} vocabulary entries, {} users",
        summary.articles, summary.vocab, summary.users
    );
    println!(
        "{} train / {} valid / {} test impressions",
        summary.train_impressions, summary.valid_impressions, summary.test_impressions
    );
    println!("wrote {}", cache.display());
    Ok(())
}

fn cmd_train(args: &RunArgs) -> Result<()> {
    let resolved = resolve(args)?;
    let record = experiment::run(&resolved, &args.out)?;
    if let Some(test) = &record.test {
        println!("test:  {}", metrics_line(test));
    }
    if let Some(valid) = &record.validation {
        println!(
            "valid: {}  (best epoch {})",
            metrics_line(valid),
            record.best_epoch.unwrap_or(0)
        );
    }
    println!("wrote {}", args.out.join("run.json").display());
    Ok(())
}

fn with_precision<T>(
    resolved: &Resolved,
    f32_case: impl FnOnce() -> Result<T>,
    f64_case: impl FnOnce() -> Result<T>,
) -> Result<T> {
    match resolved.config.train.precision.as_str() {
        "f32" => f32_case(),
        "f64" => f64_case(),
        other => Err(Error::Config(format!(
            "train.precision must be \"f32\" or \"f64\", got {other:?}"
        ))),
    }
}

fn evaluate_checkpoint<S: Scalar>(
    resolved: &Resolved,
    out: &Path,
    ckpt: &Path,
) -> Result<MetricsReport> {
    let (ds, _) = experiment::load_or_build_dataset(&resolved.config, out)?;
    let (model, _): (Model<S>, u64) = open_checkpoint(ckpt)?;
    let mut cache = VectorCache::new(&model);
    eval::fast_evaluate(&model, &ds, &ds.test, &mut cache)
}

fn cmd_evaluate(args: &RunArgs) -> Result<()> {
    let resolved = resolve(args)?;
    std::fs::create_dir_all(&args.out)?;
    let ckpt = checkpoint_path(&resolved, &args.out);
    let report = with_precision(
        &resolved,
        || evaluate_checkpoint::<f32>(&resolved, &args.out, &ckpt),
        || evaluate_checkpoint::<f64>(&resolved, &args.out, &ckpt),
    )?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Data(format!("cannot serialize metrics: {e}")))?;
    std::fs::write(args.out.join("metrics.json"), json + "\n")?;
    println!("test:  {}", metrics_line(&report));
    println!("wrote {}", args.out.join("metrics.json").display());
    Ok(())
}

fn analyze_with_model<S: Scalar>(
    resolved: &Resolved,
    out: &Path,
    ckpt: &Path,
    ds: &newsrec_core::data::ProcessedDataset,
) -> Result<Vec<String>> {
    let (model, _): (Model<S>, u64) = open_checkpoint(ckpt)?;
    let mut cache = VectorCache::new(&model);
    let scores = eval::score_impressions_fast(&model, ds, &ds.test, &mut cache)?;
    experiment::emit_model_insight(&resolved.config, ds, &scores, out)
}

fn cmd_analyze(args: &RunArgs) -> Result<()> {
    let resolved = resolve(args)?;
    std::fs::create_dir_all(&args.out)?;
    let (ds, _) = experiment::load_or_build_dataset(&resolved.config, &args.out)?;
    let mut written = experiment::emit_dataset_insight(&ds, &args.out)?;
    let ckpt = checkpoint_path(&resolved, &args.out);
    if ckpt.exists() {
        written.extend(with_precision(
            &resolved,
            || analyze_with_model::<f32>(&resolved, &args.out, &ckpt, &ds),
            || analyze_with_model::<f64>(&resolved, &args.out, &ckpt, &ds),
        )?);
    } else {
        log::warn!(
            "no checkpoint at {}; emitting dataset-side artifacts only",
            ckpt.display()
        );
    }
    for name in &written {
        println!("wrote {}", args.out.join(name).display());
    }
    Ok(())
}

fn cmd_sweep(args: &RunArgs) -> Result<()> {
    let resolved = resolve(args)?;
    let records = experiment::sweep(&resolved, &args.out)?;
    for (record, value) in records.iter().zip(resolved.config.sweep.values.iter()) {
        if let Some(test) = &record.test {
            println!("{} = {}: {}", resolved.config.sweep.axis, value, metrics_line(test));
        }
    }
    println!("wrote {}", args.out.join("sweep.csv").display());
    Ok(())
}

fn cmd_synth(args: &RunArgs) -> Result<()> {
    let resolved = resolve(args)?;
    let spec = resolved.config.synthetic_spec();
    let summary = generate_synthetic(&spec, &args.out)?;
    println!(
        "{} train / {} test impressions, measured topic purity {:.3}",
        summary.train_impressions, summary.test_impressions, summary.measured_purity
    );
    println!("wrote {}", args.out.join("train").display());
    println!("wrote {}", args.out.join("test").display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Preprocess(args) => cmd_preprocess(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Synth(args) => cmd_synth(args),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
