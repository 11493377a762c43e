//! Command-line interface.
//!
//! Every subcommand takes `--config <file>`, `--seed <u64>` and
//! `--out <dir>` and writes its outputs under the output directory.
//! Exit codes: 0 success, 1 validation error (bad flags, bad config,
//! missing files), 2 runtime failure (divergence, failed checks).

use super::checkpoint::save_checkpoint;
use super::config::{
    load_json, AttackRunConfig, BenchmarkConfig, DatasetConfig, EvaluateConfig, ExperimentConfig,
    Task,
};
use super::data::load_idx_images;
use super::experiments::{
    divergence_checks, gradcheck_suite, run_attack, run_benchmark, run_classification,
    run_regression_protocol,
};
use super::train::{evaluate_classification, evaluate_regression};
use crate::numerics::parallel::env_thread_cap;
use crate::numerics::RngStream;
use crate::{Error, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(
    name = "alphabox",
    version,
    about = "Dropout Bayesian neural networks with alpha-divergence objectives"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; every random choice in a run derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Number of random configurations (gradcheck only).
    #[arg(long, default_value_t = 60)]
    configs: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model; writes metrics.csv, timings.csv, metrics.json and
    /// checkpoint.bin.
    Train(RunArgs),
    /// Evaluate a checkpoint on a dataset.
    Evaluate(RunArgs),
    /// Run an adversarial sweep against a checkpoint; writes
    /// plotdata/attack_sweep.csv.
    Attack(RunArgs),
    /// Identical runs sweeping the training sample count K; writes
    /// plotdata/k_sweep.csv.
    Benchmark(RunArgs),
    /// Verify the divergence and energy identities; exits 0 iff all pass.
    #[command(name = "divergence-check")]
    DivergenceCheck(CheckArgs),
    /// Finite-difference checks of the training objective; exits 0 iff all
    /// configurations pass at 1e-5.
    Gradcheck(CheckArgs),
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own usage text; validation failures exit 1.
            let _ = e.print();
            return 1;
        }
    };
    let outcome = match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Attack(a) => cmd_attack(&a),
        Command::Benchmark(a) => cmd_benchmark(&a),
        Command::DivergenceCheck(a) => cmd_divergence_check(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Parse { .. }
        | Error::InvalidParameter(_)
        | Error::ShapeMismatch(_)
        | Error::EmptyReduction => 1,
        _ => 2,
    }
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn ensure_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("plotdata"))?;
    Ok(())
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut text = String::new();
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn resolve_threads(config_threads: Option<usize>) -> usize {
    config_threads.unwrap_or_else(env_thread_cap).max(1)
}

#[derive(Serialize)]
struct RegressionSummary {
    task: &'static str,
    seed: u64,
    config_hash: u64,
    tau: f64,
    n_splits: usize,
    mean_test_nll: f64,
    stderr_test_nll: f64,
    mean_test_rmse: f64,
    stderr_test_rmse: f64,
    diverged_splits: usize,
    per_split_nll: Vec<f64>,
    per_split_rmse: Vec<f64>,
}

#[derive(Serialize)]
struct ClassificationSummary {
    task: &'static str,
    seed: u64,
    config_hash: u64,
    epochs_completed: usize,
    diverged: bool,
    test_nll: f64,
    test_accuracy: f64,
    test_mean_entropy: f64,
    test_points: usize,
    k_test: usize,
}

fn cmd_train(args: &RunArgs) -> Result<i32> {
    let cfg: ExperimentConfig = load_json(&args.config)?;
    cfg.validate()?;
    ensure_out(&args.out)?;
    let threads = resolve_threads(cfg.threads);
    match cfg.task {
        Task::Regression => {
            let result = run_regression_protocol(&cfg, args.seed, threads)?;
            let rows: Vec<Vec<String>> = result
                .epoch_log
                .iter()
                .map(|(split, row)| {
                    vec![
                        split.to_string(),
                        row.epoch.to_string(),
                        fmt(row.train_objective),
                        fmt(row.test_nll),
                        fmt(row.test_metric),
                    ]
                })
                .collect();
            write_csv(
                &args.out.join("metrics.csv"),
                &["split", "epoch", "train_objective", "test_nll_std", "test_rmse_std"],
                &rows,
            )?;
            let timing_rows: Vec<Vec<String>> = result
                .epoch_seconds
                .iter()
                .map(|(split, epoch, secs)| {
                    vec![split.to_string(), epoch.to_string(), format!("{secs:.6}")]
                })
                .collect();
            write_csv(
                &args.out.join("timings.csv"),
                &["split", "epoch", "wall_seconds"],
                &timing_rows,
            )?;
            write_json(
                &args.out.join("metrics.json"),
                &RegressionSummary {
                    task: "regression",
                    seed: args.seed,
                    config_hash: cfg.config_hash(),
                    tau: result.tau,
                    n_splits: result.per_split.len(),
                    mean_test_nll: result.mean_nll,
                    stderr_test_nll: result.stderr_nll,
                    mean_test_rmse: result.mean_rmse,
                    stderr_test_rmse: result.stderr_rmse,
                    diverged_splits: result.per_split.iter().filter(|s| s.diverged).count(),
                    per_split_nll: result.per_split.iter().map(|s| s.nll).collect(),
                    per_split_rmse: result.per_split.iter().map(|s| s.rmse).collect(),
                },
            )?;
            save_checkpoint(&args.out.join("checkpoint.bin"), &result.last_meta, &result.last_params)?;
            if result.any_diverged {
                eprintln!("diverged: at least one split aborted; last finite checkpoint written");
                return Ok(2);
            }
            Ok(0)
        }
        Task::Classification => {
            let result = run_classification(&cfg, args.seed, threads)?;
            let rows: Vec<Vec<String>> = result
                .outcome
                .epochs
                .iter()
                .map(|row| {
                    vec![
                        row.epoch.to_string(),
                        fmt(row.train_objective),
                        fmt(row.test_nll),
                        fmt(row.test_metric),
                        fmt(row.test_entropy.unwrap_or(0.0)),
                    ]
                })
                .collect();
            write_csv(
                &args.out.join("metrics.csv"),
                &["epoch", "train_objective", "test_nll", "test_accuracy", "test_entropy"],
                &rows,
            )?;
            let timing_rows: Vec<Vec<String>> = result
                .outcome
                .epoch_seconds
                .iter()
                .enumerate()
                .map(|(i, secs)| vec![(i + 1).to_string(), format!("{secs:.6}")])
                .collect();
            write_csv(&args.out.join("timings.csv"), &["epoch", "wall_seconds"], &timing_rows)?;
            write_json(
                &args.out.join("metrics.json"),
                &ClassificationSummary {
                    task: "classification",
                    seed: args.seed,
                    config_hash: cfg.config_hash(),
                    epochs_completed: result.outcome.completed_epochs,
                    diverged: result.outcome.diverged,
                    test_nll: result.final_eval.nll,
                    test_accuracy: result.final_eval.metric,
                    test_mean_entropy: result.final_eval.mean_entropy.unwrap_or(0.0),
                    test_points: result.final_eval.n_points,
                    k_test: cfg.k_test,
                },
            )?;
            save_checkpoint(&args.out.join("checkpoint.bin"), &result.meta, &result.outcome.params)?;
            if result.outcome.diverged {
                eprintln!("diverged: training aborted; last finite checkpoint written");
                return Ok(2);
            }
            Ok(0)
        }
    }
}

#[derive(Serialize)]
struct EvaluateSummary {
    checkpoint: String,
    config_hash: u64,
    n_points: usize,
    k_test: usize,
    test_nll: f64,
    test_metric: f64,
    test_mean_entropy: Option<f64>,
}

fn cmd_evaluate(args: &RunArgs) -> Result<i32> {
    let cfg: EvaluateConfig = load_json(&args.config)?;
    ensure_out(&args.out)?;
    let threads = resolve_threads(cfg.threads);
    let (meta, params) = super::checkpoint::load_checkpoint(Path::new(&cfg.checkpoint))?;
    let arch = meta.architecture()?;
    cfg.dataset.check_files_exist()?;
    let base = RngStream::new(args.seed).substream(2_000_000);
    let summary = match (&meta.task, &cfg.dataset) {
        (Task::Classification, DatasetConfig::Idx { test_images, test_labels, limit_test, .. }) => {
            let (x, labels) =
                load_idx_images(Path::new(test_images), Path::new(test_labels), *limit_test)?;
            if x.shape()[1] != arch.input_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "checkpoint expects {} inputs, dataset has {}",
                    arch.input_dim(),
                    x.shape()[1]
                )));
            }
            evaluate_classification(&params, &arch, &x, &labels, cfg.k_test, &base, threads, None)?
        }
        (Task::Regression, DatasetConfig::Csv { path }) => {
            let (x, y) = super::data::load_csv_regression(Path::new(path))?;
            let sx = meta
                .feature_standardizer
                .as_ref()
                .ok_or_else(|| Error::Config("regression checkpoint lacks standardizer".into()))?;
            let sy = meta
                .target_standardizer
                .as_ref()
                .ok_or_else(|| Error::Config("regression checkpoint lacks standardizer".into()))?;
            if x.shape()[1] != arch.input_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "checkpoint expects {} features, dataset has {}",
                    arch.input_dim(),
                    x.shape()[1]
                )));
            }
            let all: Vec<usize> = (0..x.shape()[0]).collect();
            let xs = sx.transform_rows(&x, &all)?;
            let ys = sy.transform_values(&y, &all);
            let yt = crate::numerics::Tensor::from_vec(vec![ys.len(), 1], ys)?;
            let mut s = evaluate_regression(
                &params, &arch, &xs, &yt, meta.tau, cfg.k_test, &base, threads, None,
            )?;
            // Original target units.
            s.nll += sy.std[0].ln();
            s.metric *= sy.std[0];
            s
        }
        _ => {
            return Err(Error::Config(
                "checkpoint task does not match the dataset kind".into(),
            ))
        }
    };
    write_csv(
        &args.out.join("metrics.csv"),
        &["n_points", "k_test", "test_nll", "test_metric", "test_mean_entropy"],
        &[vec![
            summary.n_points.to_string(),
            cfg.k_test.to_string(),
            fmt(summary.nll),
            fmt(summary.metric),
            fmt(summary.mean_entropy.unwrap_or(f64::NAN)).replace("NaN", ""),
        ]],
    )?;
    write_json(
        &args.out.join("metrics.json"),
        &EvaluateSummary {
            checkpoint: cfg.checkpoint.clone(),
            config_hash: meta.config_hash,
            n_points: summary.n_points,
            k_test: cfg.k_test,
            test_nll: summary.nll,
            test_metric: summary.metric,
            test_mean_entropy: summary.mean_entropy,
        },
    )?;
    Ok(0)
}

fn cmd_attack(args: &RunArgs) -> Result<i32> {
    let cfg: AttackRunConfig = load_json(&args.config)?;
    ensure_out(&args.out)?;
    let threads = resolve_threads(cfg.threads);
    let rows = run_attack(&cfg, args.seed, threads)?;
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![fmt(r.sweep_value), fmt(r.accuracy), fmt(r.mean_entropy), r.n_points.to_string()]
        })
        .collect();
    write_csv(
        &args.out.join("plotdata").join("attack_sweep.csv"),
        &["sweep_value", "accuracy", "mean_entropy", "n_points"],
        &csv_rows,
    )?;
    #[derive(Serialize)]
    struct AttackSummary {
        checkpoint: String,
        seed: u64,
        rows: usize,
    }
    write_json(
        &args.out.join("metrics.json"),
        &AttackSummary { checkpoint: cfg.checkpoint.clone(), seed: args.seed, rows: rows.len() },
    )?;
    Ok(0)
}

fn cmd_benchmark(args: &RunArgs) -> Result<i32> {
    let cfg: BenchmarkConfig = load_json(&args.config)?;
    cfg.base.validate()?;
    ensure_out(&args.out)?;
    let threads = resolve_threads(cfg.base.threads);
    let rows = run_benchmark(&cfg.base, &cfg.k_values, args.seed, threads)?;
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.k.to_string(),
                r.epoch.to_string(),
                format!("{:.6}", r.wall_seconds),
                fmt(r.test_accuracy),
                fmt(r.test_ll),
            ]
        })
        .collect();
    write_csv(
        &args.out.join("plotdata").join("k_sweep.csv"),
        &["k", "epoch", "wall_seconds", "test_accuracy", "test_ll"],
        &csv_rows,
    )?;
    #[derive(Serialize)]
    struct BenchmarkSummary {
        seed: u64,
        k_values: Vec<usize>,
    }
    write_json(
        &args.out.join("metrics.json"),
        &BenchmarkSummary { seed: args.seed, k_values: cfg.k_values.clone() },
    )?;
    Ok(0)
}

fn cmd_divergence_check(args: &CheckArgs) -> Result<i32> {
    ensure_out(&args.out)?;
    let rows = divergence_checks()?;
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![r.name.to_string(), fmt(r.value), fmt(r.tolerance), r.pass.to_string()]
        })
        .collect();
    write_csv(
        &args.out.join("plotdata").join("divergence_checks.csv"),
        &["check", "value", "tolerance", "pass"],
        &csv_rows,
    )?;
    let mut all_pass = true;
    for r in &rows {
        println!(
            "{}: {} (value {:.3e}, tolerance {:.1e})",
            r.name,
            if r.pass { "PASS" } else { "FAIL" },
            r.value,
            r.tolerance
        );
        all_pass &= r.pass;
    }
    Ok(if all_pass { 0 } else { 2 })
}

fn cmd_gradcheck(args: &CheckArgs) -> Result<i32> {
    ensure_out(&args.out)?;
    let rows = gradcheck_suite(args.configs, args.seed)?;
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.index.to_string(),
                r.task.to_string(),
                fmt(r.alpha),
                fmt(r.rel_error),
                r.pass.to_string(),
            ]
        })
        .collect();
    write_csv(
        &args.out.join("plotdata").join("gradcheck.csv"),
        &["config", "task", "alpha", "rel_error", "pass"],
        &csv_rows,
    )?;
    let failures = rows.iter().filter(|r| !r.pass).count();
    println!(
        "gradcheck: {}/{} configurations within 1e-5",
        rows.len() - failures,
        rows.len()
    );
    Ok(if failures == 0 { 0 } else { 2 })
}
