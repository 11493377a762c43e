//! 1-D Gaussian densities and their closed-form divergences.

use crate::real::Real;
use crate::{Error, Result};

/// Gaussian with mean/variance parameterisation; variance strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian<R: Real> {
    mean: R,
    variance: R,
}

impl<R: Real> Gaussian<R> {
    pub fn new(mean: R, variance: R) -> Result<Self> {
        if !mean.is_finite() || !variance.is_finite() || variance <= R::zero() {
            return Err(Error::InvalidParameter(format!(
                "Gaussian needs finite mean and variance > 0, got ({mean}, {variance})"
            )));
        }
        Ok(Gaussian { mean, variance })
    }

    pub fn standard() -> Self {
        Gaussian { mean: R::zero(), variance: R::one() }
    }

    pub fn mean(&self) -> R {
        self.mean
    }

    pub fn variance(&self) -> R {
        self.variance
    }

    pub fn stddev(&self) -> R {
        self.variance.sqrt()
    }

    pub fn log_pdf(&self, x: R) -> R {
        let two = R::of(2.0);
        let diff = x - self.mean;
        -(two * R::PI() * self.variance).ln() / two - diff * diff / (two * self.variance)
    }

    pub fn pdf(&self, x: R) -> R {
        self.log_pdf(x).exp()
    }

    /// Density of `N(x; mean, variance)` evaluated in log space.
    pub fn log_density_at(x: R, mean: R, variance: R) -> R {
        let two = R::of(2.0);
        let diff = x - mean;
        -(two * R::PI() * variance).ln() / two - diff * diff / (two * variance)
    }
}

/// log integral p(x)^a q(x)^(1-a) dx for Gaussians, the common kernel of
/// every divergence below. Returns None when the combined precision
/// `a/var_p + (1-a)/var_q` is not positive (the integral diverges).
pub fn log_pow_integral<R: Real>(p: &Gaussian<R>, q: &Gaussian<R>, a: R) -> Option<R> {
    let one = R::one();
    let two = R::of(2.0);
    let b = one - a;
    let prec = a / p.variance + b / q.variance;
    if prec <= R::zero() {
        return None;
    }
    // Collect the quadratic form: lin x - x^2 prec / 2 plus constants.
    let lin = a * p.mean / p.variance + b * q.mean / q.variance;
    let const_term = a * p.mean * p.mean / p.variance + b * q.mean * q.mean / q.variance;
    // Gaussian integral: sqrt(2 pi / prec) exp(lin^2 / (2 prec) - const/2).
    // The (2 pi)^(a + b - 1) factor vanishes because a + b = 1.
    Some(
        -(a / two) * p.variance.ln() - (b / two) * q.variance.ln() - prec.ln() / two
            + lin * lin / (two * prec)
            - const_term / two,
    )
}

/// KL divergence KL[p || q] between two Gaussians.
pub fn kl_div<R: Real>(p: &Gaussian<R>, q: &Gaussian<R>) -> R {
    let two = R::of(2.0);
    let diff = p.mean() - q.mean();
    (q.variance() / p.variance()).ln() / two
        + (p.variance() + diff * diff) / (two * q.variance())
        - R::one() / two
}

/// Renyi divergence `R_a[p || q] = log(int p^a q^(1-a)) / (a - 1)`.
///
/// Defined for `a != 1`; an invalid precision combination yields +inf.
pub fn renyi_div<R: Real>(p: &Gaussian<R>, q: &Gaussian<R>, alpha: R) -> Result<R> {
    if (alpha - R::one()).abs() < R::of(1e-12) {
        return Err(Error::InvalidParameter(
            "Renyi divergence of order 1 is the KL limit; call kl_div".into(),
        ));
    }
    match log_pow_integral(p, q, alpha) {
        Some(log_int) => Ok(log_int / (alpha - R::one())),
        None => Ok(R::infinity()),
    }
}

/// Amari alpha-divergence `D_a[p || q] = (1 - int p^a q^(1-a)) / (a(1-a))`.
///
/// The endpoints are the KL limits: `D_0[p||q] = KL[q||p]` and
/// `D_1[p||q] = KL[p||q]`. An invalid precision combination yields +inf.
pub fn amari_div<R: Real>(p: &Gaussian<R>, q: &Gaussian<R>, alpha: R) -> R {
    let eps = R::of(1e-12);
    if alpha.abs() < eps {
        return kl_div(q, p);
    }
    if (alpha - R::one()).abs() < eps {
        return kl_div(p, q);
    }
    match log_pow_integral(p, q, alpha) {
        Some(log_int) => (R::one() - log_int.exp()) / (alpha * (R::one() - alpha)),
        None => R::infinity(),
    }
}

/// Squared Hellinger distance `1 - int sqrt(p q)`; satisfies
/// `D_0.5[p||q] = 4 Hel^2`.
pub fn hellinger_sq<R: Real>(p: &Gaussian<R>, q: &Gaussian<R>) -> R {
    let half = R::of(0.5);
    match log_pow_integral(p, q, half) {
        Some(log_bc) => R::one() - log_bc.exp(),
        None => R::one(),
    }
}
