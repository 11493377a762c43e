//! Mini-batch training loop and dataset-level evaluation.

use super::config::OptimizerConfig;
use super::optim::Optimizer;
use crate::net::{MlpArchitecture, ParameterSet};
use crate::numerics::{parallel, RngStream, Tensor};
use crate::objective::{total_objective, AlphaObjectiveConfig, BatchTargets};
use crate::uncertainty::{argmax, mc_predict_classification, mc_predict_regression};
use crate::{Error, Result};
use std::time::Instant;

/// Per-epoch progress metrics are computed on a capped test slice with a
/// capped sample count to keep epoch cost bounded; the full-budget numbers
/// come from the final evaluation.
const EPOCH_EVAL_K: usize = 10;
const EPOCH_EVAL_LIMIT: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_objective: f64,
    pub test_nll: f64,
    /// Accuracy (classification) or RMSE (regression), in the units the
    /// targets were given in.
    pub test_metric: f64,
    pub test_entropy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: ParameterSet,
    pub epochs: Vec<EpochRow>,
    /// Optimisation wall seconds per epoch (evaluation excluded); not part
    /// of the determinism contract.
    pub epoch_seconds: Vec<f64>,
    pub diverged: bool,
    pub completed_epochs: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalSummary {
    /// Negative mean per-point predictive log-likelihood.
    pub nll: f64,
    /// Accuracy (classification) or RMSE (regression).
    pub metric: f64,
    pub mean_entropy: Option<f64>,
    pub n_points: usize,
}

pub enum TaskData<'a> {
    Regression {
        x_train: &'a Tensor,
        y_train: &'a Tensor,
        x_test: &'a Tensor,
        y_test: &'a Tensor,
    },
    Classification {
        x_train: &'a Tensor,
        labels_train: &'a [usize],
        x_test: &'a Tensor,
        labels_test: &'a [usize],
    },
}

impl TaskData<'_> {
    fn n_train(&self) -> usize {
        match self {
            TaskData::Regression { x_train, .. } => x_train.shape()[0],
            TaskData::Classification { x_train, .. } => x_train.shape()[0],
        }
    }
}

/// Negative log-likelihood, accuracy and mean entropy of MC-dropout
/// prediction over a classification set. Input `i` uses `base.substream(i)`.
pub fn evaluate_classification(
    params: &ParameterSet,
    arch: &MlpArchitecture,
    x: &Tensor,
    labels: &[usize],
    k_test: usize,
    base: &RngStream,
    threads: usize,
    limit: Option<usize>,
) -> Result<EvalSummary> {
    let (n_all, _) = x.dims2()?;
    let n = limit.map_or(n_all, |l| l.min(n_all));
    if n == 0 || labels.len() < n {
        return Err(Error::ShapeMismatch(format!("{} labels for {n} rows", labels.len())));
    }
    let per_point = parallel::run_indexed(n, threads, |i| {
        let mut stream = base.substream(i as u64);
        let s = mc_predict_classification(params, arch, x.row(i), Some(labels[i]), k_test, &mut stream)?;
        Ok::<(f64, bool, f64), Error>((
            s.log_likelihood.unwrap(),
            argmax(&s.mean) == labels[i],
            s.entropy.unwrap(),
        ))
    });
    let mut ll_sum = 0.0;
    let mut correct = 0usize;
    let mut entropy_sum = 0.0;
    for item in per_point {
        let (ll, ok, h) = item?;
        ll_sum += ll;
        correct += ok as usize;
        entropy_sum += h;
    }
    Ok(EvalSummary {
        nll: -ll_sum / n as f64,
        metric: correct as f64 / n as f64,
        mean_entropy: Some(entropy_sum / n as f64),
        n_points: n,
    })
}

/// Negative log-likelihood and RMSE of MC-dropout prediction over a
/// regression set, in the units of the given targets.
pub fn evaluate_regression(
    params: &ParameterSet,
    arch: &MlpArchitecture,
    x: &Tensor,
    y: &Tensor,
    tau: f64,
    k_test: usize,
    base: &RngStream,
    threads: usize,
    limit: Option<usize>,
) -> Result<EvalSummary> {
    let (n_all, _) = x.dims2()?;
    let n = limit.map_or(n_all, |l| l.min(n_all));
    if n == 0 || y.shape()[0] < n {
        return Err(Error::ShapeMismatch(format!("{} targets for {n} rows", y.shape()[0])));
    }
    let per_point = parallel::run_indexed(n, threads, |i| {
        let mut stream = base.substream(i as u64);
        let s = mc_predict_regression(params, arch, x.row(i), Some(y.row(i)), tau, k_test, &mut stream)?;
        let se: f64 = s
            .mean
            .iter()
            .zip(y.row(i))
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        Ok::<(f64, f64), Error>((s.log_likelihood.unwrap(), se))
    });
    let mut ll_sum = 0.0;
    let mut se_sum = 0.0;
    for item in per_point {
        let (ll, se) = item?;
        ll_sum += ll;
        se_sum += se;
    }
    Ok(EvalSummary {
        nll: -ll_sum / n as f64,
        metric: (se_sum / n as f64).sqrt(),
        mean_entropy: None,
        n_points: n,
    })
}

fn epoch_eval(
    params: &ParameterSet,
    arch: &MlpArchitecture,
    data: &TaskData,
    tau: f64,
    k_test: usize,
    base: &RngStream,
    threads: usize,
) -> Result<EvalSummary> {
    let k = k_test.min(EPOCH_EVAL_K);
    match data {
        TaskData::Regression { x_test, y_test, .. } => evaluate_regression(
            params, arch, x_test, y_test, tau, k, base, threads, Some(EPOCH_EVAL_LIMIT),
        ),
        TaskData::Classification { x_test, labels_test, .. } => evaluate_classification(
            params, arch, x_test, labels_test, k, base, threads, Some(EPOCH_EVAL_LIMIT),
        ),
    }
}

/// Run mini-batch optimisation of the total objective.
///
/// Deterministic given `seed`: parameter init, epoch shuffles and mask draws
/// all consume one serial stream, per-epoch evaluation uses substreams keyed
/// by epoch. A non-finite batch objective stops training and returns the
/// parameters from the last completed epoch with `diverged` set.
pub fn fit(
    data: &TaskData,
    arch: &MlpArchitecture,
    objective: &AlphaObjectiveConfig,
    optimizer_cfg: &OptimizerConfig,
    k_test: usize,
    seed: u64,
    threads: usize,
) -> Result<FitOutcome> {
    let mut stream = RngStream::new(seed);
    let mut params = ParameterSet::init_gaussian(arch, &mut stream)?;
    let mut optimizer = Optimizer::new(optimizer_cfg, params.param_count());
    let n_train = data.n_train();
    if n_train == 0 {
        return Err(Error::EmptyReduction);
    }
    let batch_size = optimizer_cfg.batch_size.min(n_train);
    let mut cfg = objective.clone();
    cfg.n_data = n_train;

    let mut epochs = Vec::new();
    let mut epoch_seconds = Vec::new();
    let mut last_good = params.clone();
    let mut diverged = false;
    let mut completed = 0;

    'outer: for epoch in 0..optimizer_cfg.epochs {
        let started = Instant::now();
        // Fisher-Yates shuffle from the serial stream.
        let mut order: Vec<usize> = (0..n_train).collect();
        for i in (1..n_train).rev() {
            let j = (stream.next_u64() % (i as u64 + 1)) as usize;
            order.swap(i, j);
        }
        let mut objective_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch_size) {
            let step = match data {
                TaskData::Regression { x_train, y_train, .. } => {
                    let xb = super::data::gather_rows(x_train, chunk)?;
                    let yb = super::data::gather_rows(y_train, chunk)?;
                    total_objective(&params, arch, &xb, &BatchTargets::Values(&yb), &cfg, &mut stream, threads)
                }
                TaskData::Classification { x_train, labels_train, .. } => {
                    let xb = super::data::gather_rows(x_train, chunk)?;
                    let lb: Vec<usize> = chunk.iter().map(|&i| labels_train[i]).collect();
                    total_objective(&params, arch, &xb, &BatchTargets::Classes(&lb), &cfg, &mut stream, threads)
                }
            };
            // Exploding parameters surface either as a non-finite loss or as
            // a non-finite-input error from the loss kernels.
            let (loss, grads) = match step {
                Ok(pair) => pair,
                Err(Error::NonFinite(_)) => {
                    diverged = true;
                    params = last_good.clone();
                    break 'outer;
                }
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                diverged = true;
                params = last_good.clone();
                break 'outer;
            }
            optimizer.step(&mut params, &grads)?;
            objective_sum += loss;
            batches += 1;
        }
        if !params.all_finite() {
            diverged = true;
            params = last_good.clone();
            break 'outer;
        }
        epoch_seconds.push(started.elapsed().as_secs_f64());

        let eval_base = RngStream::new(seed).substream(1_000_000 + epoch as u64);
        let summary = match epoch_eval(&params, arch, data, cfg.tau, k_test, &eval_base, threads) {
            Ok(s) => s,
            // Finite but astronomically large parameters can still overflow
            // the forward pass; treat that as divergence too.
            Err(Error::NonFinite(_)) => {
                diverged = true;
                params = last_good.clone();
                break 'outer;
            }
            Err(e) => return Err(e),
        };
        last_good = params.clone();
        completed = epoch + 1;
        epochs.push(EpochRow {
            epoch: epoch + 1,
            train_objective: objective_sum / batches.max(1) as f64,
            test_nll: summary.nll,
            test_metric: summary.metric,
            test_entropy: summary.mean_entropy,
        });
    }

    Ok(FitOutcome { params, epochs, epoch_seconds, diverged, completed_epochs: completed })
}

/// Full-budget evaluation, used once per run after training.
pub fn final_eval(
    params: &ParameterSet,
    arch: &MlpArchitecture,
    data: &TaskData,
    tau: f64,
    k_test: usize,
    seed: u64,
    threads: usize,
) -> Result<EvalSummary> {
    let base = RngStream::new(seed).substream(2_000_000);
    match data {
        TaskData::Regression { x_test, y_test, .. } => {
            evaluate_regression(params, arch, x_test, y_test, tau, k_test, &base, threads, None)
        }
        TaskData::Classification { x_test, labels_test, .. } => {
            evaluate_classification(params, arch, x_test, labels_test, k_test, &base, threads, None)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{OptimizerConfig, OptimizerKind};
    use crate::net::Activation;
    use crate::numerics::sample_gaussian;

    fn linearly_separable() -> (Tensor, Vec<usize>) {
        // Two well-separated clusters in 2-D, 20 points.
        let mut rng = RngStream::new(5);
        let mut x = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            let class = i % 2;
            let center = if class == 0 { -2.0 } else { 2.0 };
            x.push(center + 0.3 * rng.normal());
            x.push(center + 0.3 * rng.normal());
            labels.push(class);
        }
        (Tensor::from_vec(vec![20, 2], x).unwrap(), labels)
    }

    fn opt(epochs: usize) -> OptimizerConfig {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-2,
            batch_size: 10,
            epochs,
            momentum: 0.9,
        }
    }

    fn objective_cfg(arch: &MlpArchitecture) -> AlphaObjectiveConfig {
        AlphaObjectiveConfig {
            alpha: 0.5,
            k_train: 5,
            tau: 1.0,
            n_data: 0,
            layer_reg: AlphaObjectiveConfig::default_layer_reg(arch, 1e-6),
            include_likelihood_constant: true,
        }
    }

    #[test]
    fn zero_training_keeps_initial_parameters() {
        let (x, labels) = linearly_separable();
        let arch = MlpArchitecture::new(vec![2, 4, 2], vec![Activation::Relu], vec![0.0, 0.2]).unwrap();
        let data = TaskData::Classification {
            x_train: &x,
            labels_train: &labels,
            x_test: &x,
            labels_test: &labels,
        };
        // epochs = 0 is rejected at config level; emulate by comparing the
        // initial parameters against a fresh init with the same seed.
        let outcome = fit(&data, &arch, &objective_cfg(&arch), &opt(1), 5, 9, 1).unwrap();
        let fresh = ParameterSet::init_gaussian(&arch, &mut RngStream::new(9)).unwrap();
        assert_eq!(outcome.epochs.len(), 1);
        // One epoch moved the parameters; init matches the stream contract.
        assert_ne!(outcome.params.flatten(), fresh.flatten());
    }

    #[test]
    fn separable_toy_reaches_low_loss() {
        let (x, labels) = linearly_separable();
        let arch = MlpArchitecture::new(vec![2, 8, 2], vec![Activation::Relu], vec![0.0, 0.1]).unwrap();
        let data = TaskData::Classification {
            x_train: &x,
            labels_train: &labels,
            x_test: &x,
            labels_test: &labels,
        };
        let outcome = fit(&data, &arch, &objective_cfg(&arch), &opt(500), 5, 7, 1).unwrap();
        assert!(!outcome.diverged);
        let last = outcome.epochs.last().unwrap();
        // Mean per-point objective over the 20-point toy.
        assert!(
            last.train_objective / 20.0 < 0.1,
            "per-point loss {}",
            last.train_objective / 20.0
        );
        assert!(last.test_metric > 0.95, "accuracy {}", last.test_metric);
    }

    #[test]
    fn rerunning_with_same_seed_reproduces_metrics_exactly() {
        let (x, labels) = linearly_separable();
        let arch = MlpArchitecture::new(vec![2, 4, 2], vec![Activation::Relu], vec![0.0, 0.3]).unwrap();
        let data = TaskData::Classification {
            x_train: &x,
            labels_train: &labels,
            x_test: &x,
            labels_test: &labels,
        };
        let a = fit(&data, &arch, &objective_cfg(&arch), &opt(20), 5, 3, 1).unwrap();
        let b = fit(&data, &arch, &objective_cfg(&arch), &opt(20), 5, 3, 1).unwrap();
        assert_eq!(a.epochs, b.epochs);
        assert_eq!(a.params.flatten(), b.params.flatten());
    }

    #[test]
    fn divergence_returns_last_finite_parameters() {
        let (x, labels) = linearly_separable();
        let arch = MlpArchitecture::new(vec![2, 4, 2], vec![Activation::Relu], vec![0.0, 0.2]).unwrap();
        let data = TaskData::Classification {
            x_train: &x,
            labels_train: &labels,
            x_test: &x,
            labels_test: &labels,
        };
        // An absurd learning rate forces non-finite parameters quickly.
        let bad = OptimizerConfig {
            kind: OptimizerKind::SgdMomentum,
            learning_rate: 1e18,
            batch_size: 10,
            epochs: 30,
            momentum: 0.9,
        };
        let outcome = fit(&data, &arch, &objective_cfg(&arch), &bad, 5, 3, 1).unwrap();
        assert!(outcome.diverged);
        assert!(outcome.params.all_finite());
    }

    #[test]
    fn regression_fit_learns_a_linear_map() {
        let mut rng = RngStream::new(8);
        let x = sample_gaussian(&mut rng, 0.0, 1.0, &[64, 3]).unwrap();
        let mut y_data = Vec::with_capacity(64);
        for i in 0..64 {
            let row = x.row(i);
            y_data.push(0.5 * row[0] - 1.2 * row[1] + 0.3 * row[2]);
        }
        let y = Tensor::from_vec(vec![64, 1], y_data).unwrap();
        let arch = MlpArchitecture::new(vec![3, 16, 1], vec![Activation::Relu], vec![0.0, 0.05]).unwrap();
        let data = TaskData::Regression { x_train: &x, y_train: &y, x_test: &x, y_test: &y };
        let mut cfg = objective_cfg(&arch);
        cfg.tau = 5.0;
        let outcome = fit(&data, &arch, &cfg, &opt(400), 20, 11, 1).unwrap();
        assert!(!outcome.diverged);
        let last = outcome.epochs.last().unwrap();
        assert!(last.test_metric < 0.25, "rmse {}", last.test_metric);
    }
}
