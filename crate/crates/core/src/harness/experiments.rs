//! Experiment drivers: the multi-split regression protocol, classification
//! runs, the K sweep, attack sweeps, and the self-check suites behind the
//! `gradcheck` and `divergence-check` subcommands.

use super::checkpoint::CheckpointMeta;
use super::config::{AttackRunConfig, AttackSpecConfig, DatasetConfig, ExperimentConfig, Task};
use super::data::{gather_rows, load_csv_regression, load_idx_images, split_indices, Standardizer};
use super::train::{final_eval, fit, EpochRow, EvalSummary, FitOutcome, TaskData};
use crate::divergences::{
    amari_div, bb_alpha_energy_expfam, bb_alpha_energy_quadrature, cavity_normalizer,
    hellinger_sq, kl_div, power_ep_energy, power_ep_fixed_point, renyi_div,
    reparametrized_energy, variational_free_energy, Gaussian, GaussianToy, NaturalParams,
};
use crate::net::{forward_stochastic, MlpArchitecture, ParameterSet};
use crate::numerics::{sample_gaussian, RngStream, Tensor};
use crate::objective::{total_objective, AlphaObjectiveConfig, BatchTargets};
use crate::uncertainty::{detection_curve, SweepRow, SweepSpec};
use crate::{Error, Result};
use std::path::Path;

pub struct SplitResult {
    pub split: usize,
    /// Negative test log-likelihood per point, original target units.
    pub nll: f64,
    pub rmse: f64,
    pub diverged: bool,
}

pub struct RegressionProtocolResult {
    pub tau: f64,
    pub per_split: Vec<SplitResult>,
    pub mean_nll: f64,
    pub stderr_nll: f64,
    pub mean_rmse: f64,
    pub stderr_rmse: f64,
    /// (split, row) pairs, standardised units.
    pub epoch_log: Vec<(usize, EpochRow)>,
    pub epoch_seconds: Vec<(usize, usize, f64)>,
    pub last_params: ParameterSet,
    pub last_meta: CheckpointMeta,
    pub any_diverged: bool,
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn default_n_splits(n: usize) -> usize {
    if n < 2000 {
        20
    } else {
        5
    }
}

struct PreparedSplit {
    x_train: Tensor,
    y_train: Tensor,
    x_test: Tensor,
    y_test: Tensor,
    target_std: f64,
    feature_standardizer: Standardizer,
    target_standardizer: Standardizer,
}

fn prepare_split(
    x: &Tensor,
    y: &[f64],
    train_idx: &[usize],
    test_idx: &[usize],
) -> Result<PreparedSplit> {
    let sx = Standardizer::fit_rows(x, train_idx)?;
    let sy = Standardizer::fit_values(y, train_idx)?;
    let x_train = sx.transform_rows(x, train_idx)?;
    let x_test = sx.transform_rows(x, test_idx)?;
    let y_train_v = sy.transform_values(y, train_idx);
    let y_test_v = sy.transform_values(y, test_idx);
    let y_train = Tensor::from_vec(vec![train_idx.len(), 1], y_train_v)?;
    let y_test = Tensor::from_vec(vec![test_idx.len(), 1], y_test_v)?;
    Ok(PreparedSplit {
        x_train,
        y_train,
        x_test,
        y_test,
        target_std: sy.std[0],
        feature_standardizer: sx,
        target_standardizer: sy,
    })
}

/// Grid-search tau on a validation carve-out of the first split's training
/// set: the split shuffle is already random, so the last 20% of the train
/// indices form the validation set.
fn select_tau(
    cfg: &ExperimentConfig,
    x: &Tensor,
    y: &[f64],
    seed: u64,
    threads: usize,
) -> Result<f64> {
    if let Some(tau) = cfg.objective.tau {
        return Ok(tau);
    }
    let split_cfg = cfg.split.as_ref().ok_or_else(|| {
        Error::Config("regression without a split section needs an explicit tau".into())
    })?;
    let n = x.shape()[0];
    let (train_idx, _) = split_indices(seed, 0, n, split_cfg.test_fraction);
    let n_val = (train_idx.len() / 5).max(1);
    let fit_idx = &train_idx[..train_idx.len() - n_val];
    let val_idx = &train_idx[train_idx.len() - n_val..];
    let prepared = prepare_split(x, y, fit_idx, val_idx)?;
    let (d_in, d_out) = (prepared.x_train.shape()[1], 1);
    let arch = cfg.architecture.build(d_in, d_out)?;

    let mut best = (f64::INFINITY, cfg.objective.tau_grid[0]);
    for &tau in &cfg.objective.tau_grid {
        let objective = AlphaObjectiveConfig {
            alpha: cfg.objective.alpha,
            k_train: cfg.objective.k_train,
            tau,
            n_data: 0,
            layer_reg: AlphaObjectiveConfig::default_layer_reg(&arch, cfg.objective.weight_decay),
            include_likelihood_constant: cfg.objective.include_likelihood_constant,
        };
        let data = TaskData::Regression {
            x_train: &prepared.x_train,
            y_train: &prepared.y_train,
            x_test: &prepared.x_test,
            y_test: &prepared.y_test,
        };
        let outcome = fit(&data, &arch, &objective, &cfg.optimizer, cfg.k_test, seed, threads)?;
        if outcome.diverged {
            continue;
        }
        let summary = final_eval(&outcome.params, &arch, &data, tau, cfg.k_test, seed, threads)?;
        if summary.nll < best.0 {
            best = (summary.nll, tau);
        }
    }
    Ok(best.1)
}

/// The multi-split regression protocol: random 90/10-style splits, features
/// and targets standardised on each training split, test log-likelihood
/// reported in original target units (standardised NLL + log target std).
pub fn run_regression_protocol(
    cfg: &ExperimentConfig,
    seed: u64,
    threads: usize,
) -> Result<RegressionProtocolResult> {
    cfg.validate()?;
    let DatasetConfig::Csv { path } = &cfg.dataset else {
        return Err(Error::Config("regression expects a csv dataset".into()));
    };
    cfg.dataset.check_files_exist()?;
    let (x, y) = load_csv_regression(Path::new(path))?;
    let n = x.shape()[0];
    let split_cfg = cfg
        .split
        .clone()
        .ok_or_else(|| Error::Config("regression needs a split section".into()))?;
    let n_splits = split_cfg.n_splits.unwrap_or_else(|| default_n_splits(n));

    let tau = select_tau(cfg, &x, &y, seed, threads)?;

    let mut per_split = Vec::new();
    let mut epoch_log = Vec::new();
    let mut epoch_seconds = Vec::new();
    let mut last: Option<(ParameterSet, CheckpointMeta)> = None;
    let mut any_diverged = false;

    for split in 0..n_splits {
        let (train_idx, test_idx) = split_indices(seed, split as u64, n, split_cfg.test_fraction);
        let prepared = prepare_split(&x, &y, &train_idx, &test_idx)?;
        let arch = cfg.architecture.build(prepared.x_train.shape()[1], 1)?;
        let objective = AlphaObjectiveConfig {
            alpha: cfg.objective.alpha,
            k_train: cfg.objective.k_train,
            tau,
            n_data: 0,
            layer_reg: AlphaObjectiveConfig::default_layer_reg(&arch, cfg.objective.weight_decay),
            include_likelihood_constant: cfg.objective.include_likelihood_constant,
        };
        let data = TaskData::Regression {
            x_train: &prepared.x_train,
            y_train: &prepared.y_train,
            x_test: &prepared.x_test,
            y_test: &prepared.y_test,
        };
        let run_seed = RngStream::new(seed).substream(split as u64).seed() ^ seed.rotate_left(17);
        let outcome = fit(&data, &arch, &objective, &cfg.optimizer, cfg.k_test, run_seed, threads)?;
        any_diverged |= outcome.diverged;
        for row in &outcome.epochs {
            epoch_log.push((split, row.clone()));
        }
        for (e, s) in outcome.epoch_seconds.iter().enumerate() {
            epoch_seconds.push((split, e + 1, *s));
        }
        let summary = final_eval(&outcome.params, &arch, &data, tau, cfg.k_test, run_seed, threads)?;
        // Back to original units: densities divide by the target std, RMSE
        // multiplies by it.
        let nll = summary.nll + prepared.target_std.ln();
        let rmse = summary.metric * prepared.target_std;
        per_split.push(SplitResult { split, nll, rmse, diverged: outcome.diverged });

        let meta = CheckpointMeta {
            task: Task::Regression,
            layer_widths: arch.layer_widths().to_vec(),
            activations: arch.hidden_activations().to_vec(),
            dropout: arch.dropout_rates().to_vec(),
            tau,
            feature_standardizer: Some(prepared.feature_standardizer),
            target_standardizer: Some(prepared.target_standardizer),
            config_hash: cfg.config_hash(),
            epoch: outcome.completed_epochs,
            seed,
        };
        last = Some((outcome.params, meta));
    }

    let (mean_nll, stderr_nll) = mean_stderr(&per_split.iter().map(|s| s.nll).collect::<Vec<_>>());
    let (mean_rmse, stderr_rmse) =
        mean_stderr(&per_split.iter().map(|s| s.rmse).collect::<Vec<_>>());
    let (last_params, last_meta) = last.expect("at least one split");
    Ok(RegressionProtocolResult {
        tau,
        per_split,
        mean_nll,
        stderr_nll,
        mean_rmse,
        stderr_rmse,
        epoch_log,
        epoch_seconds,
        last_params,
        last_meta,
        any_diverged,
    })
}

pub struct ClassificationRunResult {
    pub outcome: FitOutcome,
    pub final_eval: EvalSummary,
    pub arch: MlpArchitecture,
    pub meta: CheckpointMeta,
}

pub fn run_classification(
    cfg: &ExperimentConfig,
    seed: u64,
    threads: usize,
) -> Result<ClassificationRunResult> {
    cfg.validate()?;
    let DatasetConfig::Idx {
        train_images,
        train_labels,
        test_images,
        test_labels,
        limit_train,
        limit_test,
    } = &cfg.dataset
    else {
        return Err(Error::Config("classification expects an idx dataset".into()));
    };
    cfg.dataset.check_files_exist()?;
    let (x_train, labels_train) =
        load_idx_images(Path::new(train_images), Path::new(train_labels), *limit_train)?;
    let (x_test, labels_test) =
        load_idx_images(Path::new(test_images), Path::new(test_labels), *limit_test)?;
    let arch = cfg.architecture.build(x_train.shape()[1], 10)?;
    let objective = AlphaObjectiveConfig {
        alpha: cfg.objective.alpha,
        k_train: cfg.objective.k_train,
        tau: cfg.objective.tau.unwrap_or(1.0),
        n_data: 0,
        layer_reg: AlphaObjectiveConfig::default_layer_reg(&arch, cfg.objective.weight_decay),
        include_likelihood_constant: cfg.objective.include_likelihood_constant,
    };
    let data = TaskData::Classification {
        x_train: &x_train,
        labels_train: &labels_train,
        x_test: &x_test,
        labels_test: &labels_test,
    };
    let outcome = fit(&data, &arch, &objective, &cfg.optimizer, cfg.k_test, seed, threads)?;
    let final_summary =
        final_eval(&outcome.params, &arch, &data, objective.tau, cfg.k_test, seed, threads)?;
    let meta = CheckpointMeta {
        task: Task::Classification,
        layer_widths: arch.layer_widths().to_vec(),
        activations: arch.hidden_activations().to_vec(),
        dropout: arch.dropout_rates().to_vec(),
        tau: objective.tau,
        feature_standardizer: None,
        target_standardizer: None,
        config_hash: cfg.config_hash(),
        epoch: outcome.completed_epochs,
        seed,
    };
    Ok(ClassificationRunResult { outcome, final_eval: final_summary, arch, meta })
}

pub struct KSweepRow {
    pub k: usize,
    pub epoch: usize,
    pub wall_seconds: f64,
    pub test_accuracy: f64,
    pub test_ll: f64,
}

/// Identical classification runs except for K.
pub fn run_benchmark(
    base: &ExperimentConfig,
    k_values: &[usize],
    seed: u64,
    threads: usize,
) -> Result<Vec<KSweepRow>> {
    if k_values.is_empty() {
        return Err(Error::Config("benchmark needs at least one K".into()));
    }
    let mut rows = Vec::new();
    for &k in k_values {
        let mut cfg = base.clone();
        cfg.objective.k_train = k;
        let result = run_classification(&cfg, seed, threads)?;
        for (row, &secs) in result.outcome.epochs.iter().zip(&result.outcome.epoch_seconds) {
            rows.push(KSweepRow {
                k,
                epoch: row.epoch,
                wall_seconds: secs,
                test_accuracy: row.test_metric,
                test_ll: -row.test_nll,
            });
        }
    }
    Ok(rows)
}

/// Attack sweep against a stored checkpoint; rows follow the
/// `sweep_value,accuracy,mean_entropy,n_points` schema.
pub fn run_attack(cfg: &AttackRunConfig, seed: u64, threads: usize) -> Result<Vec<SweepRow>> {
    let (meta, params) = super::checkpoint::load_checkpoint(Path::new(&cfg.checkpoint))?;
    if meta.task != Task::Classification {
        return Err(Error::Config("attack sweeps need a classification checkpoint".into()));
    }
    let arch = meta.architecture()?;
    let DatasetConfig::Idx { test_images, test_labels, limit_test, .. } = &cfg.dataset else {
        return Err(Error::Config("attack expects an idx dataset".into()));
    };
    cfg.dataset.check_files_exist()?;
    let (x_test, labels_test) =
        load_idx_images(Path::new(test_images), Path::new(test_labels), *limit_test)?;
    if x_test.shape()[1] != arch.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint expects {} inputs, dataset has {}",
            arch.input_dim(),
            x_test.shape()[1]
        )));
    }

    let (spec, keep): (SweepSpec, Box<dyn Fn(usize) -> bool>) = match &cfg.attack {
        AttackSpecConfig::FgsUntargeted { eta_grid } => {
            (SweepSpec::FgsEtas(eta_grid.clone()), Box::new(|_| true))
        }
        AttackSpecConfig::TargetedIterative { target_class, eta, steps } => {
            let target = *target_class;
            (
                SweepSpec::TargetedSteps { target, eta: *eta, steps: steps.clone() },
                Box::new(move |label| label != target),
            )
        }
    };
    let mut rows_idx = Vec::new();
    for (i, &label) in labels_test.iter().enumerate() {
        if keep(label) {
            rows_idx.push(i);
        }
        if rows_idx.len() == cfg.n_eval {
            break;
        }
    }
    if rows_idx.is_empty() {
        return Err(Error::Config("no evaluation points left after filtering".into()));
    }
    let xs = gather_rows(&x_test, &rows_idx)?;
    let labels: Vec<usize> = rows_idx.iter().map(|&i| labels_test[i]).collect();
    let base = RngStream::new(seed);
    detection_curve(&params, &arch, &xs, &labels, &spec, cfg.k_attack, cfg.k_test, &base, threads)
}

pub struct GradCheckRow {
    pub index: usize,
    pub task: &'static str,
    pub alpha: f64,
    pub rel_error: f64,
    pub pass: bool,
}

const GRADCHECK_ALPHAS: [f64; 5] = [0.0, 0.3, 0.5, 1.0, 2.0];
const GRADCHECK_TOL: f64 = 1e-5;
const FD_STEP: f64 = 1e-6;

fn objective_value(
    params: &ParameterSet,
    arch: &MlpArchitecture,
    x: &Tensor,
    targets: &BatchTargets,
    cfg: &AlphaObjectiveConfig,
    mask_seed: u64,
) -> Result<f64> {
    let mut rng = RngStream::new(mask_seed);
    Ok(total_objective(params, arch, x, targets, cfg, &mut rng, 1)?.0)
}

/// Finite-difference check of the total objective on one random small
/// configuration. Central differences straddle the ReLU kink whenever a
/// pre-activation sits within the step size of zero, so draws whose minimum
/// |pre-activation| is below 1e-4 are rejected and redrawn deterministically.
fn gradcheck_one(index: usize, seed: u64) -> Result<GradCheckRow> {
    let alpha = GRADCHECK_ALPHAS[index % GRADCHECK_ALPHAS.len()];
    let classification = index % 2 == 0;
    for attempt in 0..64u64 {
        let mut rng = RngStream::new(seed).substream(index as u64 * 97 + attempt);
        let n_hidden = (rng.next_u64() % 3) as usize;
        let mut widths = vec![2 + (rng.next_u64() % 5) as usize];
        for _ in 0..n_hidden {
            widths.push(2 + (rng.next_u64() % 5) as usize);
        }
        widths.push(if classification { 2 + (rng.next_u64() % 3) as usize } else { 1 + (rng.next_u64() % 3) as usize });
        let activations = vec![crate::net::Activation::Relu; n_hidden];
        let dropout: Vec<f64> = (0..widths.len() - 1)
            .map(|_| [0.0, 0.25, 0.5][(rng.next_u64() % 3) as usize])
            .collect();
        let arch = MlpArchitecture::new(widths.clone(), activations, dropout)?;
        let params = ParameterSet::init_gaussian(&arch, &mut rng)?;
        let m = 1 + (rng.next_u64() % 4) as usize;
        let k = 1 + (rng.next_u64() % 5) as usize;
        let x = sample_gaussian(&mut rng, 0.0, 1.0, &[m, arch.input_dim()])?;
        let labels: Vec<usize> =
            (0..m).map(|_| (rng.next_u64() % arch.output_dim() as u64) as usize).collect();
        let y = sample_gaussian(&mut rng, 0.0, 1.0, &[m, arch.output_dim()])?;
        let cfg = AlphaObjectiveConfig {
            alpha,
            k_train: k,
            tau: 0.5 + 2.0 * rng.next_f64(),
            n_data: 3 + (rng.next_u64() % 20) as usize,
            layer_reg: (0..arch.n_weight_layers()).map(|_| 0.01 * rng.next_f64()).collect(),
            include_likelihood_constant: true,
        };
        let mask_seed = rng.next_u64();

        // Kink rejection: replay the masks the objective will draw.
        let (_, _, record) =
            forward_stochastic(&params, &arch, &x, k, &mut RngStream::new(mask_seed), 1)?;
        if record.min_abs_preactivation() < 1e-4 {
            continue;
        }

        let targets = if classification {
            BatchTargets::Classes(&labels)
        } else {
            BatchTargets::Values(&y)
        };
        let mut rng_obj = RngStream::new(mask_seed);
        let (_, grads) = total_objective(&params, &arch, &x, &targets, &cfg, &mut rng_obj, 1)?;
        let analytic = grads.flatten();
        let flat = params.flatten();
        let mut diff2 = 0.0;
        let mut norm2 = 0.0;
        for i in 0..flat.len() {
            let mut plus = flat.clone();
            plus[i] += FD_STEP;
            let mut minus = flat.clone();
            minus[i] -= FD_STEP;
            let p_plus = ParameterSet::from_flat(&arch, &plus)?;
            let p_minus = ParameterSet::from_flat(&arch, &minus)?;
            let fd = (objective_value(&p_plus, &arch, &x, &targets, &cfg, mask_seed)?
                - objective_value(&p_minus, &arch, &x, &targets, &cfg, mask_seed)?)
                / (2.0 * FD_STEP);
            diff2 += (fd - analytic[i]) * (fd - analytic[i]);
            norm2 += fd * fd + analytic[i] * analytic[i];
        }
        let rel_error = diff2.sqrt() / norm2.sqrt().max(1e-300);
        return Ok(GradCheckRow {
            index,
            task: if classification { "classification" } else { "regression" },
            alpha,
            rel_error,
            pass: rel_error < GRADCHECK_TOL,
        });
    }
    Err(Error::InvalidParameter(format!(
        "gradcheck config {index}: no kink-free draw in 64 attempts"
    )))
}

/// The finite-difference oracle suite over random small configurations.
pub fn gradcheck_suite(n_configs: usize, seed: u64) -> Result<Vec<GradCheckRow>> {
    (0..n_configs).map(|i| gradcheck_one(i, seed)).collect()
}

pub struct CheckRow {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn check(name: &'static str, value: f64, tolerance: f64) -> CheckRow {
    CheckRow { name, value, tolerance, pass: value.is_finite() && value < tolerance }
}

/// The divergence/energy identity suite behind `divergence-check`.
///
/// Every row reports an error magnitude and the tolerance it must beat.
/// Monotonicity checks report the largest step in the wrong direction
/// (negative when strictly decreasing), with tolerance 0.
pub fn divergence_checks() -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    let standard: Gaussian<f64> = Gaussian::new(0.0, 1.0)?;
    let shifted: Gaussian<f64> = Gaussian::new(1.0, 1.0)?;

    // Closed forms at the canonical pair.
    let renyi_half = renyi_div(&standard, &shifted, 0.5)?;
    rows.push(check("renyi_half_vs_quarter", (renyi_half - 0.25).abs(), 1e-8));
    let quad_bc = crate::divergences::quadrature::integrate(
        |x: f64| (standard.pdf(x) * shifted.pdf(x)).sqrt(),
        -16.0,
        17.0,
        1e-12,
    )?;
    rows.push(check(
        "renyi_half_vs_quadrature",
        (renyi_half - quad_bc.ln() / (0.5 - 1.0)).abs(),
        1e-8,
    ));
    rows.push(check("kl_standard_shifted_vs_half", (kl_div(&standard, &shifted) - 0.5).abs(), 1e-12));

    // Conversion and Hellinger identities over 100 seeded pairs.
    let mut rng = RngStream::new(90_210);
    let mut conversion_err: f64 = 0.0;
    let mut hellinger_err: f64 = 0.0;
    for _ in 0..100 {
        let p = Gaussian::new(rng.normal(), 0.1 + 3.0 * rng.next_f64())?;
        let q = Gaussian::new(rng.normal(), 0.1 + 3.0 * rng.next_f64())?;
        let a = 0.05 + 0.9 * rng.next_f64();
        let d = amari_div(&p, &q, a);
        let r = renyi_div(&p, &q, a)?;
        let converted = (1.0 - ((a - 1.0) * r).exp()) / (a * (1.0 - a));
        conversion_err = conversion_err.max((d - converted).abs());
        hellinger_err =
            hellinger_err.max((amari_div(&p, &q, 0.5) - 4.0 * hellinger_sq(&p, &q)).abs());
    }
    rows.push(check("amari_renyi_conversion_max_err", conversion_err, 1e-10));
    rows.push(check("hellinger_identity_max_err", hellinger_err, 1e-10));

    // Reparametrisation identity on the N = 10 toy at alpha = 0.5.
    let mut obs_rng = RngStream::new(777);
    let observations: Vec<f64> = (0..10).map(|_| 0.4 + 0.6 * obs_rng.normal()).collect();
    let model = GaussianToy::new(Gaussian::new(0.2, 1.5)?, observations, 0.8)?;
    let q_tilde = Gaussian::new(0.45, 0.35)?;
    let alpha = 0.5;
    let (_, q) = cavity_normalizer(&q_tilde, model.prior(), alpha, model.n())?;
    let direct = bb_alpha_energy_quadrature(&model, &q, alpha)?;
    let reparam = reparametrized_energy(&model, &q_tilde, alpha)?;
    rows.push(check("reparametrisation_gap_n10", (direct - reparam).abs(), 1e-6));

    // Z_q -> 1 and R_beta -> KL monotonically in N.
    let p0: Gaussian<f64> = Gaussian::new(0.0, 2.0)?;
    let qt: Gaussian<f64> = Gaussian::new(0.6, 0.7)?;
    let mut worst_step = f64::NEG_INFINITY;
    let mut last_gap = f64::INFINITY;
    for n in [10usize, 100, 1000, 10_000] {
        let (z, _) = cavity_normalizer(&qt, &p0, 0.5, n)?;
        let gap = (z - 1.0).abs();
        worst_step = worst_step.max(gap - last_gap);
        last_gap = gap;
    }
    rows.push(check("zq_gap_monotone_step", worst_step, 0.0));
    let kl = kl_div(&qt, &p0);
    let mut worst_step = f64::NEG_INFINITY;
    let mut last_gap = f64::INFINITY;
    for n in [10.0f64, 100.0, 1000.0, 10_000.0] {
        let beta = n / (n - 0.5);
        let gap = (renyi_div(&qt, &p0, beta)? - kl).abs();
        worst_step = worst_step.max(gap - last_gap);
        last_gap = gap;
    }
    rows.push(check("renyi_kl_gap_monotone_step", worst_step, 0.0));

    // Appendix-style equivalences: tied sites and the exponential-family
    // form agree with each other and with quadrature.
    let lambda0 = NaturalParams::from_gaussian(model.prior());
    let shared = NaturalParams::new(0.3, -0.25);
    let mut tied_gap: f64 = 0.0;
    let mut tied_quad_gap: f64 = 0.0;
    for a in [0.5, 1.0] {
        let tied = vec![shared; model.n()];
        let pep = power_ep_energy(&model, &lambda0, &tied, a)?;
        let bb = bb_alpha_energy_expfam(&model, &lambda0, &shared, a)?;
        tied_gap = tied_gap.max((pep - bb).abs());
        let q_tied = lambda0.add(&shared.scale(model.n() as f64)).to_gaussian()?;
        let quad = bb_alpha_energy_quadrature(&model, &q_tied, a)?;
        tied_quad_gap = tied_quad_gap.max((pep - quad).abs());
    }
    rows.push(check("tied_sites_pep_vs_bb", tied_gap, 1e-8));
    rows.push(check("tied_sites_pep_vs_quadrature", tied_quad_gap, 1e-6));

    // Power-EP fixed point recovers the exact posterior.
    let exact = model.exact_posterior();
    let mut ep_gap: f64 = 0.0;
    for a in [0.5, 1.0] {
        let sol = power_ep_fixed_point(&model, a, 500, 0.5)?;
        if !sol.converged {
            return Err(Error::Diverged(format!("power EP at alpha {a} did not converge")));
        }
        ep_gap = ep_gap
            .max((sol.posterior.mean() - exact.mean()).abs())
            .max((sol.posterior.variance() - exact.variance()).abs());
    }
    rows.push(check("ep_fixed_point_posterior_err", ep_gap, 1e-8));

    // Single-factor evidence identities.
    let single: GaussianToy<f64> = GaussianToy::new(Gaussian::new(0.1, 1.3)?, vec![0.7], 0.6)?;
    let lambda0_single = NaturalParams::from_gaussian(single.prior());
    let pep_single = power_ep_energy(&single, &lambda0_single, &[single.exact_site(0)], 1.0)?;
    rows.push(check(
        "single_factor_pep_vs_evidence",
        (pep_single + single.log_evidence()).abs(),
        1e-10,
    ));
    let q_any = Gaussian::new(0.5, 0.4)?;
    let quad_single = bb_alpha_energy_quadrature(&single, &q_any, 1.0)?;
    rows.push(check(
        "single_factor_quadrature_vs_evidence",
        (quad_single + single.log_evidence()).abs(),
        1e-8,
    ));

    // alpha -> 0 limit at a test point whose O(alpha) coefficient is small:
    // clustered observations with q at the exact posterior.
    let limit_model: GaussianToy<f64> =
        GaussianToy::new(Gaussian::new(0.0, 1.5)?, vec![0.3, 0.5, 0.45, 0.6], 1.0)?;
    let q_post = limit_model.exact_posterior();
    let vfe = variational_free_energy(&limit_model, &q_post);
    let near = bb_alpha_energy_quadrature(&limit_model, &q_post, 1e-3)?;
    rows.push(check("vfe_limit_alpha_1e-3", (near - vfe).abs(), 1e-4));

    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divergence_checks_all_pass() {
        let rows = divergence_checks().unwrap();
        assert!(rows.len() >= 10);
        for row in &rows {
            assert!(row.pass, "{} failed: {} !< {}", row.name, row.value, row.tolerance);
        }
    }

    #[test]
    fn gradcheck_handful_passes() {
        let rows = gradcheck_suite(10, 12345).unwrap();
        for row in &rows {
            assert!(row.pass, "config {} ({} alpha {}) rel err {}", row.index, row.task, row.alpha, row.rel_error);
        }
    }
}
