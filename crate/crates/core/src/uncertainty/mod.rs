//! MC-dropout prediction, uncertainty metrics and gradient-sign attacks.
//!
//! Prediction draws `K_test` fresh mask collections and averages the
//! per-sample outputs. Attack gradients differentiate the log of the
//! MC-averaged probability under a fixed set of `K_attack` masks, redrawn
//! each step; predictions and attacks over a dataset use per-input
//! substreams so results are order-deterministic and safely parallel.

use crate::net::{
    forward_with_masks, input_gradient, sample_masks, MaskSet, MlpArchitecture, ParameterSet,
};
use crate::numerics::{log_softmax, log_sum_exp, parallel, RngStream, Tensor};
use crate::{Error, Result};

/// Per-input summary of an MC-dropout prediction.
#[derive(Debug, Clone)]
pub struct PredictiveSummary {
    /// Classification: MC-mean class probabilities. Regression: MC-mean
    /// predictive vector.
    pub mean: Vec<f64>,
    /// Entropy of the averaged probability vector (classification only).
    pub entropy: Option<f64>,
    /// Per-point log-likelihood of the supplied target, when given.
    pub log_likelihood: Option<f64>,
    pub k_test: usize,
}

/// Shannon entropy of a probability vector, with 0 log 0 = 0.
pub fn predictive_entropy(probs: &[f64]) -> Result<f64> {
    let mut h = 0.0;
    for &p in probs {
        if p.is_nan() || p < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "probabilities must be non-negative, got {p}"
            )));
        }
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    Ok(h)
}

fn softmax_rows(logits: &Tensor) -> Result<Vec<Vec<f64>>> {
    let (_, k, c) = logits.dims3()?;
    let mut out = Vec::with_capacity(k);
    for kk in 0..k {
        let row: Vec<f64> = (0..c).map(|j| logits.at3(0, kk, j)).collect();
        out.push(log_softmax(&row)?.iter().map(|v| v.exp()).collect());
    }
    Ok(out)
}

/// MC-dropout class prediction: mean of softmax outputs over `k_test` mask
/// draws. When a label is supplied, the log-likelihood is the log of the
/// averaged probability of that label.
pub fn mc_predict_classification(
    params: &ParameterSet,
    arch: &MlpArchitecture,
    x: &[f64],
    label: Option<usize>,
    k_test: usize,
    rng: &mut RngStream,
) -> Result<PredictiveSummary> {
    if k_test == 0 {
        return Err(Error::InvalidParameter("K_test must be >= 1".into()));
    }
    let x_t = Tensor::from_vec(vec![1, x.len()], x.to_vec())?;
    let masks = sample_masks(arch, 1, k_test, rng)?;
    let (logits, _) = forward_with_masks(params, arch, &x_t, &masks, 1)?;
    let per_k = softmax_rows(&logits)?;
    let c = per_k[0].len();
    let mut mean = vec![0.0; c];
    for probs in &per_k {
        for (m, p) in mean.iter_mut().zip(probs) {
            *m += p / k_test as f64;
        }
    }
    let entropy = predictive_entropy(&mean)?;
    let log_likelihood = match label {
        Some(l) if l < c => Some(mean[l].ln()),
        Some(l) => {
            return Err(Error::InvalidParameter(format!(
                "label {l} out of range for {c} classes"
            )))
        }
        None => None,
    };
    Ok(PredictiveSummary { mean, entropy: Some(entropy), log_likelihood, k_test })
}

/// MC-dropout regression prediction. The per-point log-likelihood of a
/// target `y` is `log[(1/K) sum_k N(y; f_k, tau^{-1} I)]`, evaluated with a
/// log-sum-exp over samples.
pub fn mc_predict_regression(
    params: &ParameterSet,
    arch: &MlpArchitecture,
    x: &[f64],
    y: Option<&[f64]>,
    tau: f64,
    k_test: usize,
    rng: &mut RngStream,
) -> Result<PredictiveSummary> {
    if k_test == 0 {
        return Err(Error::InvalidParameter("K_test must be >= 1".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be > 0, got {tau}")));
    }
    let x_t = Tensor::from_vec(vec![1, x.len()], x.to_vec())?;
    let masks = sample_masks(arch, 1, k_test, rng)?;
    let (preds, _) = forward_with_masks(params, arch, &x_t, &masks, 1)?;
    let (_, k, d) = preds.dims3()?;
    let mut mean = vec![0.0; d];
    for kk in 0..k {
        for j in 0..d {
            mean[j] += preds.at3(0, kk, j) / k as f64;
        }
    }
    let log_likelihood = match y {
        Some(target) => {
            if target.len() != d {
                return Err(Error::ShapeMismatch(format!(
                    "target dim {} vs output dim {d}",
                    target.len()
                )));
            }
            let log_norm = (d as f64 / 2.0) * (tau / (2.0 * std::f64::consts::PI)).ln();
            let per_sample: Vec<f64> = (0..k)
                .map(|kk| {
                    let sq: f64 = (0..d)
                        .map(|j| {
                            let r = target[j] - preds.at3(0, kk, j);
                            r * r
                        })
                        .sum();
                    log_norm - tau / 2.0 * sq
                })
                .collect();
            Some(log_sum_exp(&per_sample)? - (k as f64).ln())
        }
        None => None,
    };
    Ok(PredictiveSummary { mean, entropy: None, log_likelihood, k_test })
}

/// Gradient of `log[(1/K) sum_k softmax(f_k)(class)]` w.r.t. the input,
/// under the fixed masks. Also returns the averaged probabilities.
fn log_mean_prob_input_grad(
    params: &ParameterSet,
    arch: &MlpArchitecture,
    x: &[f64],
    class: usize,
    masks: &MaskSet,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let x_t = Tensor::from_vec(vec![1, x.len()], x.to_vec())?;
    let (logits, _) = forward_with_masks(params, arch, &x_t, masks, 1)?;
    let per_k = softmax_rows(&logits)?;
    let k = per_k.len();
    let c = per_k[0].len();
    if class >= c {
        return Err(Error::InvalidParameter(format!(
            "class {class} out of range for {c} classes"
        )));
    }
    let mut mean = vec![0.0; c];
    for probs in &per_k {
        for (m, p) in mean.iter_mut().zip(probs) {
            *m += p / k as f64;
        }
    }
    // d log p_bar(c) / d f_{k,j} = p_k(c) (1[j=c] - p_k(j)) / (K p_bar(c)).
    let mut upstream = Tensor::zeros(vec![1, k, c]);
    let denom = (k as f64) * mean[class];
    for (kk, probs) in per_k.iter().enumerate() {
        for j in 0..c {
            let indicator = if j == class { 1.0 } else { 0.0 };
            *upstream.at3_mut(0, kk, j) = probs[class] * (indicator - probs[j]) / denom;
        }
    }
    let grad = input_gradient(params, arch, x, masks, &upstream)?;
    Ok((grad, mean))
}

fn signum(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn clip_unit(x: &mut [f64]) {
    for v in x {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Untargeted fast gradient sign step:
/// `x_adv = clip(x - eta * sgn(grad_x max_y log p(y|x)))`.
///
/// The max is over the MC-averaged class probabilities under `k_attack`
/// fixed masks; ties break toward the lowest class index.
pub fn fgs_untargeted(
    params: &ParameterSet,
    arch: &MlpArchitecture,
    x: &[f64],
    eta: f64,
    k_attack: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    if eta < 0.0 {
        return Err(Error::InvalidParameter(format!("eta must be >= 0, got {eta}")));
    }
    let masks = sample_masks(arch, 1, k_attack, rng)?;
    // Probe probabilities to find the max class (scanning keeps the first,
    // i.e. lowest, index on ties).
    let x_t = Tensor::from_vec(vec![1, x.len()], x.to_vec())?;
    let (logits, _) = forward_with_masks(params, arch, &x_t, &masks, 1)?;
    let per_k = softmax_rows(&logits)?;
    let c = per_k[0].len();
    let mut mean = vec![0.0; c];
    for probs in &per_k {
        for (m, p) in mean.iter_mut().zip(probs) {
            *m += p / per_k.len() as f64;
        }
    }
    let mut best = 0;
    for j in 1..c {
        if mean[j] > mean[best] {
            best = j;
        }
    }
    let (grad, _) = log_mean_prob_input_grad(params, arch, x, best, &masks)?;
    let mut adv: Vec<f64> = x.iter().zip(&grad).map(|(&xi, &g)| xi - eta * signum(g)).collect();
    clip_unit(&mut adv);
    Ok(adv)
}

/// Targeted iterative attack: gradient-sign ascent on the target class's
/// MC-averaged log-probability, fresh masks each step, clipping to [0,1]
/// after every step. Returns the full trajectory `[x^0, ..., x^steps]`.
pub fn targeted_iterative(
    params: &ParameterSet,
    arch: &MlpArchitecture,
    x: &[f64],
    target: usize,
    eta: f64,
    steps: usize,
    k_attack: usize,
    rng: &mut RngStream,
) -> Result<Vec<Vec<f64>>> {
    if eta < 0.0 {
        return Err(Error::InvalidParameter(format!("eta must be >= 0, got {eta}")));
    }
    let mut trajectory = Vec::with_capacity(steps + 1);
    trajectory.push(x.to_vec());
    let mut current = x.to_vec();
    for _ in 0..steps {
        let masks = sample_masks(arch, 1, k_attack, rng)?;
        let (grad, _) = log_mean_prob_input_grad(params, arch, &current, target, &masks)?;
        for (v, &g) in current.iter_mut().zip(&grad) {
            *v += eta * signum(g);
        }
        clip_unit(&mut current);
        trajectory.push(current.clone());
    }
    Ok(trajectory)
}

/// One row of a detection sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub sweep_value: f64,
    pub accuracy: f64,
    pub mean_entropy: f64,
    pub n_points: usize,
}

/// What to sweep when building a detection curve.
#[derive(Debug, Clone)]
pub enum SweepSpec {
    /// Untargeted FGS at each listed stepsize.
    FgsEtas(Vec<f64>),
    /// Targeted attack measured at the listed iteration counts.
    TargetedSteps { target: usize, eta: f64, steps: Vec<usize> },
}

/// Accuracy and mean predictive entropy over a clean set under an attack
/// sweep. Point `i` of sweep row `r` uses substream `r * n + i`, so rows
/// and points are independent and the output is reproducible for any
/// thread count.
pub fn detection_curve(
    params: &ParameterSet,
    arch: &MlpArchitecture,
    xs: &Tensor,
    labels: &[usize],
    spec: &SweepSpec,
    k_attack: usize,
    k_test: usize,
    base_rng: &RngStream,
    threads: usize,
) -> Result<Vec<SweepRow>> {
    let (n, _) = xs.dims2()?;
    if n == 0 || labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {n} evaluation points",
            labels.len()
        )));
    }
    let mut rows = Vec::new();
    match spec {
        SweepSpec::FgsEtas(etas) => {
            for (r, &eta) in etas.iter().enumerate() {
                let per_point = parallel::run_indexed(n, threads, |i| {
                    let mut stream = base_rng.substream((r * n + i) as u64);
                    let x = xs.row(i).to_vec();
                    let adv = fgs_untargeted(params, arch, &x, eta, k_attack, &mut stream)?;
                    let summary = mc_predict_classification(
                        params, arch, &adv, Some(labels[i]), k_test, &mut stream,
                    )?;
                    let correct = argmax(&summary.mean) == labels[i];
                    Ok::<(bool, f64), Error>((correct, summary.entropy.unwrap()))
                });
                rows.push(reduce_row(eta, per_point)?);
            }
        }
        SweepSpec::TargetedSteps { target, eta, steps } => {
            let max_steps = steps.iter().copied().max().unwrap_or(0);
            // Trajectories are computed once per point; each requested step
            // count is then evaluated from the stored iterate.
            let trajectories = parallel::run_indexed(n, threads, |i| {
                let mut stream = base_rng.substream(i as u64);
                let x = xs.row(i).to_vec();
                let traj =
                    targeted_iterative(params, arch, &x, *target, *eta, max_steps, k_attack, &mut stream)?;
                let mut evals = Vec::with_capacity(steps.len());
                for &s in steps {
                    let summary = mc_predict_classification(
                        params, arch, &traj[s], Some(labels[i]), k_test, &mut stream,
                    )?;
                    let correct = argmax(&summary.mean) == labels[i];
                    evals.push((correct, summary.entropy.unwrap()));
                }
                Ok::<Vec<(bool, f64)>, Error>(evals)
            });
            let collected: Vec<Vec<(bool, f64)>> =
                trajectories.into_iter().collect::<Result<_>>()?;
            for (si, &s) in steps.iter().enumerate() {
                let per_point: Vec<Result<(bool, f64)>> =
                    collected.iter().map(|evals| Ok(evals[si])).collect();
                rows.push(reduce_row(s as f64, per_point)?);
            }
        }
    }
    Ok(rows)
}

fn reduce_row(sweep_value: f64, per_point: Vec<Result<(bool, f64)>>) -> Result<SweepRow> {
    let n = per_point.len();
    let mut correct = 0usize;
    let mut entropy_sum = 0.0;
    for item in per_point {
        let (ok, h) = item?;
        correct += ok as usize;
        entropy_sum += h;
    }
    Ok(SweepRow {
        sweep_value,
        accuracy: correct as f64 / n as f64,
        mean_entropy: entropy_sum / n as f64,
        n_points: n,
    })
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests;
