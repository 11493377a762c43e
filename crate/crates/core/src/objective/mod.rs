//! Reparametrised BB-alpha training objectives.
//!
//! Both task losses share one shape: per data point, collect a per-sample
//! log-likelihood term `t_{n,k}` over the K stochastic forward passes and
//! charge
//!
//! ```text
//! -(1/alpha) * (log_sum_exp_k(alpha * t_{n,k}) - log K)
//! ```
//!
//! For |alpha| below [`ALPHA_SWITCH`] the exact alpha -> 0 limit is used
//! instead, `-(1/K) sum_k t_{n,k}`, which is the standard dropout VI
//! objective. At K = 1 the log-sum-exp disappears and every alpha gives the
//! same value. At alpha = 1 the bracket is the per-point predictive
//! log-likelihood.
//!
//! Classification takes `t = log p(true class)`; regression takes
//! `t = -(tau/2)||y - f||^2`, with the Gaussian normalising constant
//! `-(D/2) log(tau/(2*pi))` added per point when requested. The constant
//! enters the minimised objective with a minus sign: it comes from the
//! log-density of `N(y; f, tau^{-1} I)`, so larger tau trades a cheaper
//! residual term against a larger constant, exactly as the likelihood does.

use crate::net::{backward_params, forward_stochastic, MlpArchitecture, ParameterSet};
use crate::numerics::{log_softmax, log_sum_exp, RngStream, Tensor};
use crate::{Error, Result};

/// Below this |alpha| the exact variational-inference limit is evaluated;
/// dividing a log-sum-exp by a smaller alpha cancels catastrophically.
pub const ALPHA_SWITCH: f64 = 1e-6;

/// Hyperparameters of the alpha objective.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaObjectiveConfig {
    pub alpha: f64,
    /// MC samples per training step (K).
    pub k_train: usize,
    /// Observation precision for regression likelihoods.
    pub tau: f64,
    /// Training-set size N; mini-batch sums are rescaled by N/M.
    pub n_data: usize,
    /// Per-layer L2 coefficients; conventionally `(1 - dropout_i) * lambda`.
    pub layer_reg: Vec<f64>,
    /// Include the Gaussian normalising constant in regression losses.
    pub include_likelihood_constant: bool,
}

impl AlphaObjectiveConfig {
    pub fn validate(&self, arch: &MlpArchitecture) -> Result<()> {
        if !self.alpha.is_finite() {
            return Err(Error::InvalidParameter("alpha must be finite".into()));
        }
        if self.k_train == 0 {
            return Err(Error::InvalidParameter("K must be >= 1".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidParameter(format!("tau must be > 0, got {}", self.tau)));
        }
        if self.layer_reg.len() != arch.n_weight_layers() {
            return Err(Error::InvalidParameter(format!(
                "layer_reg has {} entries for {} weight layers",
                self.layer_reg.len(),
                arch.n_weight_layers()
            )));
        }
        if self.layer_reg.iter().any(|&c| c < 0.0) {
            return Err(Error::InvalidParameter("layer_reg must be non-negative".into()));
        }
        Ok(())
    }

    /// The conventional regulariser coefficients `(1 - dropout_i) * lambda`.
    pub fn default_layer_reg(arch: &MlpArchitecture, weight_decay: f64) -> Vec<f64> {
        arch.dropout_rates().iter().map(|r| (1.0 - r) * weight_decay).collect()
    }
}

fn per_point_alpha_loss(t_row: &[f64], alpha: f64) -> Result<f64> {
    let k = t_row.len() as f64;
    if alpha.abs() < ALPHA_SWITCH {
        Ok(-t_row.iter().sum::<f64>() / k)
    } else {
        let scaled: Vec<f64> = t_row.iter().map(|&t| alpha * t).collect();
        let lse = log_sum_exp(&scaled)?;
        Ok(-(lse - k.ln()) / alpha)
    }
}

/// d(per-point loss)/dt_k: `-softmax_k(alpha * t)`, or `-1/K` in the VI
/// branch. Rows always sum to -1.
fn per_point_alpha_weights(t_row: &[f64], alpha: f64) -> Result<Vec<f64>> {
    let k = t_row.len();
    if alpha.abs() < ALPHA_SWITCH {
        return Ok(vec![-1.0 / k as f64; k]);
    }
    let scaled: Vec<f64> = t_row.iter().map(|&t| alpha * t).collect();
    let log_probs = log_softmax(&scaled)?;
    Ok(log_probs.iter().map(|lp| -lp.exp()).collect())
}

fn validate_log_prob_matrix(mc_log_probs: &Tensor) -> Result<(usize, usize)> {
    let (m, k) = mc_log_probs.dims2()?;
    if k == 0 || m == 0 {
        return Err(Error::EmptyReduction);
    }
    for &v in mc_log_probs.data() {
        if v.is_nan() || v > 0.0 {
            return Err(Error::InvalidParameter(format!(
                "log-probabilities must be <= 0 and not NaN, got {v}"
            )));
        }
    }
    Ok((m, k))
}

/// Classification loss summed over the batch.
///
/// `mc_log_probs_true[n][k]` is the log-probability the k-th stochastic
/// forward pass assigns to point n's true class.
pub fn classification_loss(mc_log_probs_true: &Tensor, alpha: f64) -> Result<f64> {
    let (m, _) = validate_log_prob_matrix(mc_log_probs_true)?;
    let mut total = 0.0;
    for n in 0..m {
        total += per_point_alpha_loss(mc_log_probs_true.row(n), alpha)?;
    }
    Ok(total)
}

/// d(classification_loss)/d(mc_log_probs_true), same shape as the input.
pub fn classification_loss_grad(mc_log_probs_true: &Tensor, alpha: f64) -> Result<Tensor> {
    let (m, k) = validate_log_prob_matrix(mc_log_probs_true)?;
    let mut out = Tensor::zeros(vec![m, k]);
    for n in 0..m {
        let w = per_point_alpha_weights(mc_log_probs_true.row(n), alpha)?;
        for (kk, &wv) in w.iter().enumerate() {
            *out.at2_mut(n, kk) = wv;
        }
    }
    Ok(out)
}

/// Regression loss summed over the batch.
///
/// `mc_preds` has shape (M, K, D); `y` has shape (M, D). Per point,
/// `t_k = -(tau/2)||y - f_k||^2` feeds the alpha bracket, and
/// `-(D/2) log(tau/(2*pi))` is added when `include_likelihood_constant`.
pub fn regression_loss(
    mc_preds: &Tensor,
    y: &Tensor,
    alpha: f64,
    tau: f64,
    include_likelihood_constant: bool,
) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be > 0, got {tau}")));
    }
    let (m, k, d) = mc_preds.dims3()?;
    let (my, dy) = y.dims2()?;
    if my != m || dy != d {
        return Err(Error::ShapeMismatch(format!(
            "predictions ({m},{k},{d}) vs targets ({my},{dy})"
        )));
    }
    let constant = if include_likelihood_constant {
        -(d as f64 / 2.0) * (tau / (2.0 * std::f64::consts::PI)).ln()
    } else {
        0.0
    };
    let mut total = 0.0;
    for n in 0..m {
        let mut t_row = Vec::with_capacity(k);
        for kk in 0..k {
            let mut sq = 0.0;
            for j in 0..d {
                let r = y.at2(n, j) - mc_preds.at3(n, kk, j);
                sq += r * r;
            }
            t_row.push(-(tau / 2.0) * sq);
        }
        total += per_point_alpha_loss(&t_row, alpha)? + constant;
    }
    Ok(total)
}

/// KL-derived L2 regulariser: `sum_i c_i ||W_i||_F^2`, biases excluded.
pub fn kl_regularizer(params: &ParameterSet, layer_reg: &[f64]) -> Result<f64> {
    if layer_reg.len() != params.n_layers() {
        return Err(Error::InvalidParameter(format!(
            "layer_reg has {} entries for {} weight layers",
            layer_reg.len(),
            params.n_layers()
        )));
    }
    Ok(params
        .weights()
        .iter()
        .zip(layer_reg)
        .map(|(w, &c)| c * w.frobenius_sq())
        .sum())
}

fn kl_regularizer_grad(params: &ParameterSet, layer_reg: &[f64], out: &mut ParameterSet) -> Result<()> {
    for (i, (w, &c)) in params.weights().iter().zip(layer_reg).enumerate() {
        out.weight_mut(i).axpy(2.0 * c, w)?;
    }
    Ok(())
}

/// Mini-batch targets for [`total_objective`].
#[derive(Debug, Clone, Copy)]
pub enum BatchTargets<'a> {
    /// Class index per batch row.
    Classes(&'a [usize]),
    /// Regression targets, shape (M, D).
    Values(&'a Tensor),
}

/// The full training objective on one mini-batch, with its gradient.
///
/// Per-point alpha losses are averaged over the batch and rescaled by N (an
/// unbiased estimator of the summed energy); the regulariser is added once
/// at full strength. Deterministic given the RNG stream; `threads` only
/// changes wall time.
pub fn total_objective(
    params: &ParameterSet,
    arch: &MlpArchitecture,
    x: &Tensor,
    targets: &BatchTargets,
    cfg: &AlphaObjectiveConfig,
    rng: &mut RngStream,
    threads: usize,
) -> Result<(f64, ParameterSet)> {
    cfg.validate(arch)?;
    let (m, _) = x.dims2()?;
    if m == 0 {
        return Err(Error::EmptyReduction);
    }
    let scale = cfg.n_data as f64 / m as f64;
    let (logits, masks, record) = forward_stochastic(params, arch, x, cfg.k_train, rng, threads)?;
    let (_, k, c_out) = logits.dims3()?;

    let mut data_loss = 0.0;
    let mut upstream = Tensor::zeros(vec![m, k, c_out]);

    match targets {
        BatchTargets::Classes(labels) => {
            if labels.len() != m {
                return Err(Error::ShapeMismatch(format!(
                    "{} labels for batch of {m}",
                    labels.len()
                )));
            }
            for (n, &label) in labels.iter().enumerate() {
                if label >= c_out {
                    return Err(Error::InvalidParameter(format!(
                        "label {label} out of range for {c_out} classes"
                    )));
                }
                let mut t_row = Vec::with_capacity(k);
                let mut probs = Vec::with_capacity(k);
                for kk in 0..k {
                    let row: Vec<f64> = (0..c_out).map(|j| logits.at3(n, kk, j)).collect();
                    let ls = log_softmax(&row)?;
                    t_row.push(ls[label]);
                    probs.push(ls.iter().map(|v| v.exp()).collect::<Vec<f64>>());
                }
                data_loss += per_point_alpha_loss(&t_row, cfg.alpha)?;
                let w = per_point_alpha_weights(&t_row, cfg.alpha)?;
                for kk in 0..k {
                    for j in 0..c_out {
                        let indicator = if j == label { 1.0 } else { 0.0 };
                        *upstream.at3_mut(n, kk, j) =
                            scale * w[kk] * (indicator - probs[kk][j]);
                    }
                }
            }
        }
        BatchTargets::Values(y) => {
            data_loss = regression_loss(&logits, y, cfg.alpha, cfg.tau, cfg.include_likelihood_constant)?;
            for n in 0..m {
                let mut t_row = Vec::with_capacity(k);
                for kk in 0..k {
                    let mut sq = 0.0;
                    for j in 0..c_out {
                        let r = y.at2(n, j) - logits.at3(n, kk, j);
                        sq += r * r;
                    }
                    t_row.push(-(cfg.tau / 2.0) * sq);
                }
                let w = per_point_alpha_weights(&t_row, cfg.alpha)?;
                for kk in 0..k {
                    for j in 0..c_out {
                        let r = y.at2(n, j) - logits.at3(n, kk, j);
                        *upstream.at3_mut(n, kk, j) = scale * w[kk] * cfg.tau * r;
                    }
                }
            }
        }
    }

    let mut grads = backward_params(params, arch, &record, &masks, &upstream, threads)?;
    kl_regularizer_grad(params, &cfg.layer_reg, &mut grads)?;
    let total = scale * data_loss + kl_regularizer(params, &cfg.layer_reg)?;
    Ok((total, grads))
}

#[cfg(test)]
mod tests;
