//! Conjugate Gaussian toy model: Gaussian prior over a latent mean, i.i.d.
//! Gaussian observations with known noise variance. Every quantity the
//! energy identities touch has a closed form here.

use super::expfam::NaturalParams;
use super::gaussian::Gaussian;
use crate::real::Real;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianToy<R: Real> {
    prior: Gaussian<R>,
    observations: Vec<R>,
    noise_variance: R,
}

impl<R: Real> GaussianToy<R> {
    pub fn new(prior: Gaussian<R>, observations: Vec<R>, noise_variance: R) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::InvalidParameter("need at least one observation".into()));
        }
        if !(noise_variance > R::zero()) || !noise_variance.is_finite() {
            return Err(Error::InvalidParameter("noise variance must be > 0".into()));
        }
        Ok(GaussianToy { prior, observations, noise_variance })
    }

    pub fn prior(&self) -> &Gaussian<R> {
        &self.prior
    }

    pub fn observations(&self) -> &[R] {
        &self.observations
    }

    pub fn noise_variance(&self) -> R {
        self.noise_variance
    }

    pub fn n(&self) -> usize {
        self.observations.len()
    }

    /// log f_n(w) = log N(y_n; w, noise_variance).
    pub fn log_likelihood(&self, n: usize, w: R) -> R {
        Gaussian::log_density_at(self.observations[n], w, self.noise_variance)
    }

    pub fn log_prior(&self, w: R) -> R {
        self.prior.log_pdf(w)
    }

    /// Exact site in natural-parameter form: f_n is itself an unnormalised
    /// member, exp(site . phi(w) + offset) with offset from
    /// [`Self::site_log_offset`].
    pub fn exact_site(&self, n: usize) -> NaturalParams<R> {
        let two = R::of(2.0);
        NaturalParams::new(
            self.observations[n] / self.noise_variance,
            -R::one() / (two * self.noise_variance),
        )
    }

    /// The w-free part of log f_n: -y^2/(2v) - (1/2) log(2 pi v).
    pub fn site_log_offset(&self, n: usize) -> R {
        let two = R::of(2.0);
        let y = self.observations[n];
        -y * y / (two * self.noise_variance) - (two * R::PI() * self.noise_variance).ln() / two
    }

    /// Exact posterior by conjugacy.
    pub fn exact_posterior(&self) -> Gaussian<R> {
        let prior_prec = R::one() / self.prior.variance();
        let noise_prec = R::one() / self.noise_variance;
        let n = R::of(self.n() as f64);
        let post_prec = prior_prec + n * noise_prec;
        let sum: R = self.observations.iter().fold(R::zero(), |acc, &y| acc + y);
        let mean = (self.prior.mean() * prior_prec + sum * noise_prec) / post_prec;
        Gaussian::new(mean, R::one() / post_prec).expect("posterior parameters valid")
    }

    /// log p(y_1..y_N) in closed form (sequential conjugate updates).
    pub fn log_evidence(&self) -> R {
        let mut current = self.prior;
        let mut total = R::zero();
        for &y in &self.observations {
            // Predictive for the next point: N(y; mu, var + noise).
            total = total + Gaussian::log_density_at(y, current.mean(), current.variance() + self.noise_variance);
            // Posterior update.
            let prec = R::one() / current.variance() + R::one() / self.noise_variance;
            let mean = (current.mean() / current.variance() + y / self.noise_variance) / prec;
            current = Gaussian::new(mean, R::one() / prec).expect("update valid");
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergences::quadrature::{integrate, log_integrate_exp};

    fn model() -> GaussianToy<f64> {
        GaussianToy::new(
            Gaussian::new(0.0, 2.0).unwrap(),
            vec![0.6, -0.4, 1.2, 0.1],
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn posterior_matches_quadrature_moments() {
        let m = model();
        let post = m.exact_posterior();
        let log_joint = |w: f64| {
            m.log_prior(w) + (0..m.n()).map(|n| m.log_likelihood(n, w)).sum::<f64>()
        };
        let log_z = log_integrate_exp(log_joint, -20.0, 20.0, 1e-12).unwrap();
        let mean = integrate(|w: f64| w * (log_joint(w) - log_z).exp(), -20.0, 20.0, 1e-12).unwrap();
        let second = integrate(|w: f64| w * w * (log_joint(w) - log_z).exp(), -20.0, 20.0, 1e-12).unwrap();
        assert!((post.mean() - mean).abs() < 1e-9);
        assert!((post.variance() - (second - mean * mean)).abs() < 1e-9);
    }

    #[test]
    fn evidence_matches_quadrature() {
        let m = model();
        let log_joint = |w: f64| {
            m.log_prior(w) + (0..m.n()).map(|n| m.log_likelihood(n, w)).sum::<f64>()
        };
        let log_z = log_integrate_exp(log_joint, -20.0, 20.0, 1e-12).unwrap();
        assert!((m.log_evidence() - log_z).abs() < 1e-9);
    }

    #[test]
    fn exact_site_reconstructs_likelihood() {
        let m = model();
        for n in 0..m.n() {
            let site = m.exact_site(n);
            for w in [-1.0, 0.0, 0.3, 2.0] {
                let reconstructed = site.lin * w + site.quad * w * w + m.site_log_offset(n);
                assert!((reconstructed - m.log_likelihood(n, w)).abs() < 1e-12);
            }
        }
    }
}
