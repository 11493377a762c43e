//! BB-alpha energies on the conjugate toy: the direct integral form, its
//! cavity reparametrisation, the MC estimator, and the variational free
//! energy they collapse to as alpha -> 0.

use super::expfam::NaturalParams;
use super::gaussian::{log_pow_integral, renyi_div, Gaussian};
use super::quadrature::log_integrate_exp;
use super::toy::GaussianToy;
use crate::numerics::{log_sum_exp, RngStream};
use crate::real::Real;
use crate::{Error, Result};

const VI_SWITCH: f64 = 1e-9;

/// Normalise the cavity construction `q ∝ q_tilde (q_tilde / prior)^(a/(N-a))`.
///
/// Returns the normaliser `Z_q` (by closed form; the unnormalised density is
/// Gaussian-shaped) together with the normalised `q`. As `alpha/N -> 0` the
/// exponent vanishes and `Z_q -> 1` exactly.
pub fn cavity_normalizer<R: Real>(
    q_tilde: &Gaussian<R>,
    prior: &Gaussian<R>,
    alpha: R,
    n: usize,
) -> Result<(R, Gaussian<R>)> {
    let n_r = R::of(n as f64);
    if n == 0 || !(n_r - alpha > R::zero()) {
        return Err(Error::InvalidParameter(format!(
            "cavity exponent needs N > alpha, got N = {n}, alpha = {alpha}"
        )));
    }
    let e = alpha / (n_r - alpha);
    // Unnormalised density q_tilde^(1+e) prior^(-e): powers sum to one, so
    // the shared pow-integral kernel applies directly.
    let lam_tilde = NaturalParams::from_gaussian(q_tilde);
    let lam_prior = NaturalParams::from_gaussian(prior);
    let combined = lam_tilde.scale(R::one() + e).sub(&lam_prior.scale(e));
    if !combined.is_normalisable() {
        return Err(Error::CavityNotNormalisable);
    }
    let q = combined.to_gaussian()?;
    let log_z = log_pow_integral(q_tilde, prior, R::one() + e).ok_or(Error::CavityNotNormalisable)?;
    Ok((log_z.exp(), q))
}

/// Log-density ratio term `log f_n + (log p0 - log q)/N` that every energy
/// form integrates against.
fn log_tilted_ratio<R: Real>(model: &GaussianToy<R>, q: &Gaussian<R>, n: usize, w: R) -> R {
    let n_r = R::of(model.n() as f64);
    model.log_likelihood(n, w) + (model.log_prior(w) - q.log_pdf(w)) / n_r
}

fn integration_hull<R: Real>(model: &GaussianToy<R>, q: &Gaussian<R>) -> (R, R) {
    let pad = R::of(14.0);
    let mut lo = q.mean() - pad * q.stddev();
    let mut hi = q.mean() + pad * q.stddev();
    let p = model.prior();
    lo = lo.min(p.mean() - pad * p.stddev());
    hi = hi.max(p.mean() + pad * p.stddev());
    let noise_sd = model.noise_variance().sqrt();
    for &y in model.observations() {
        lo = lo.min(y - pad * noise_sd);
        hi = hi.max(y + pad * noise_sd);
    }
    (lo, hi)
}

/// The BB-alpha energy by adaptive quadrature:
/// `-(1/a) sum_n log int q (f_n p0^{1/N} / q^{1/N})^a dw`.
pub fn bb_alpha_energy_quadrature<R: Real>(
    model: &GaussianToy<R>,
    q: &Gaussian<R>,
    alpha: R,
) -> Result<R> {
    if alpha == R::zero() {
        return Err(Error::InvalidParameter("alpha must be nonzero; use the VFE".into()));
    }
    let (lo, hi) = integration_hull(model, q);
    let tol = R::of(1e-10);
    let mut total = R::zero();
    for n in 0..model.n() {
        let g = |w: R| q.log_pdf(w) + alpha * log_tilted_ratio(model, q, n, w);
        let log_int = log_integrate_exp(g, lo, hi, tol)?;
        if !log_int.is_finite() {
            return Err(Error::Quadrature(format!(
                "factor {n}: log-integral {log_int}"
            )));
        }
        total = total - log_int / alpha;
    }
    Ok(total)
}

/// The reparametrised form `R_beta[q_tilde || p0] - (1/a) sum_n log
/// E_{q_tilde}[f_n^a]`, `beta = N/(N-a)`, every term in closed form.
pub fn reparametrized_energy<R: Real>(
    model: &GaussianToy<R>,
    q_tilde: &Gaussian<R>,
    alpha: R,
) -> Result<R> {
    let n_r = R::of(model.n() as f64);
    if !(alpha > R::zero()) || !(n_r - alpha > R::zero()) {
        return Err(Error::InvalidParameter(format!(
            "reparametrised energy needs 0 < alpha < N, got alpha = {alpha}"
        )));
    }
    let beta = n_r / (n_r - alpha);
    let renyi = renyi_div(q_tilde, model.prior(), beta)?;
    let two = R::of(2.0);
    let v = model.noise_variance();
    let two_pi = two * R::PI();
    let mut total = renyi;
    for &y in model.observations() {
        // log E_qt[f^a] = -(a/2) ln(2 pi v) + (1/2) ln(2 pi v / a)
        //                + log N(y; mean_qt, var_qt + v/a).
        let log_e = -(alpha / two) * (two_pi * v).ln()
            + (two_pi * v / alpha).ln() / two
            + Gaussian::log_density_at(y, q_tilde.mean(), q_tilde.variance() + v / alpha);
        total = total - log_e / alpha;
    }
    Ok(total)
}

/// Variational free energy `KL[q || p0] - sum_n E_q[log f_n]`, the
/// alpha -> 0 limit of the BB-alpha energy.
pub fn variational_free_energy<R: Real>(model: &GaussianToy<R>, q: &Gaussian<R>) -> R {
    let two = R::of(2.0);
    let v = model.noise_variance();
    let mut total = super::gaussian::kl_div(q, model.prior());
    for &y in model.observations() {
        let diff = q.mean() - y;
        let expected_ll =
            -(diff * diff + q.variance()) / (two * v) - (two * R::PI() * v).ln() / two;
        total = total - expected_ll;
    }
    total
}

/// MC estimator of the BB-alpha energy with K samples shared across
/// factors: `-(1/a) sum_n [log_sum_exp_k(a g_n(w_k)) - log K]` where
/// `g_n = log f_n + (log p0 - log q)/N` and `w_k ~ q`.
///
/// Biased for finite K; at K = 1 the alphas cancel and the estimator is an
/// unbiased single-sample estimate of the variational free energy.
pub fn mc_energy<R: Real>(
    model: &GaussianToy<R>,
    q: &Gaussian<R>,
    alpha: R,
    k: usize,
    rng: &mut RngStream,
) -> Result<R> {
    if k == 0 {
        return Err(Error::InvalidParameter("K must be >= 1".into()));
    }
    let draws: Vec<R> = (0..k)
        .map(|_| q.mean() + q.stddev() * R::of(rng.normal()))
        .collect();
    let log_k = R::of(k as f64).ln();
    let mut total = R::zero();
    for n in 0..model.n() {
        let g: Vec<R> = draws.iter().map(|&w| log_tilted_ratio(model, q, n, w)).collect();
        if alpha.abs() < R::of(VI_SWITCH) {
            let mean = g.iter().fold(R::zero(), |a, &b| a + b) / R::of(k as f64);
            total = total - mean;
        } else {
            let scaled: Vec<R> = g.iter().map(|&v| alpha * v).collect();
            total = total - (log_sum_exp(&scaled)? - log_k) / alpha;
        }
    }
    Ok(total)
}
