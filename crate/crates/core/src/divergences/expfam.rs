//! Natural-parameter form of the 1-D Gaussian family.
//!
//! Sufficient statistics phi(w) = (w, w^2); a member is
//! exp(lin*w + quad*w^2) / Z with log-partition
//! Z = sqrt(pi / -quad) * exp(-lin^2 / (4 quad)), normalisable iff quad < 0.

use super::gaussian::Gaussian;
use crate::real::Real;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaturalParams<R: Real> {
    /// Coefficient of w: mu / sigma^2 for a normalised Gaussian.
    pub lin: R,
    /// Coefficient of w^2: -1 / (2 sigma^2) for a normalised Gaussian.
    pub quad: R,
}

impl<R: Real> NaturalParams<R> {
    pub fn new(lin: R, quad: R) -> Self {
        NaturalParams { lin, quad }
    }

    pub fn zero() -> Self {
        NaturalParams { lin: R::zero(), quad: R::zero() }
    }

    pub fn from_gaussian(g: &Gaussian<R>) -> Self {
        let two = R::of(2.0);
        NaturalParams {
            lin: g.mean() / g.variance(),
            quad: -R::one() / (two * g.variance()),
        }
    }

    pub fn is_normalisable(&self) -> bool {
        self.quad < R::zero()
    }

    pub fn to_gaussian(&self) -> Result<Gaussian<R>> {
        if !self.is_normalisable() {
            return Err(Error::NotNormalisable(format!(
                "quad = {} must be negative",
                self.quad
            )));
        }
        let two = R::of(2.0);
        let variance = -R::one() / (two * self.quad);
        Gaussian::new(self.lin * variance, variance)
    }

    /// log integral exp(lin*w + quad*w^2) dw.
    pub fn log_partition(&self) -> Result<R> {
        if !self.is_normalisable() {
            return Err(Error::NotNormalisable(format!(
                "log-partition of quad = {}",
                self.quad
            )));
        }
        let four = R::of(4.0);
        let two = R::of(2.0);
        Ok(-self.lin * self.lin / (four * self.quad) + (R::PI() / -self.quad).ln() / two)
    }

    pub fn add(&self, other: &Self) -> Self {
        NaturalParams { lin: self.lin + other.lin, quad: self.quad + other.quad }
    }

    pub fn sub(&self, other: &Self) -> Self {
        NaturalParams { lin: self.lin - other.lin, quad: self.quad - other.quad }
    }

    pub fn scale(&self, s: R) -> Self {
        NaturalParams { lin: self.lin * s, quad: self.quad * s }
    }

    /// Max-abs difference, the convergence metric for EP sweeps.
    pub fn max_abs_diff(&self, other: &Self) -> R {
        (self.lin - other.lin).abs().max((self.quad - other.quad).abs())
    }
}
