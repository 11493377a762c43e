//! Closed-form alpha-divergences, the cavity reparametrisation and power-EP
//! energies on 1-D Gaussian toy models.
//!
//! Everything here exists to falsify the energy identities numerically:
//! each closed form is paired in the test suite with an adaptive-quadrature
//! oracle that knows nothing about the algebra. The laboratory is strictly
//! one-dimensional; the identities under test are dimension-free, and 1-D is
//! enough to catch a wrong sign or a dropped normaliser.

mod energy;
mod expfam;
mod gaussian;
mod power_ep;
pub mod quadrature;
mod toy;

pub use energy::{
    bb_alpha_energy_quadrature, cavity_normalizer, mc_energy, reparametrized_energy,
    variational_free_energy,
};
pub use expfam::NaturalParams;
pub use gaussian::{amari_div, hellinger_sq, kl_div, log_pow_integral, renyi_div, Gaussian};
pub use power_ep::{bb_alpha_energy_expfam, power_ep_energy, power_ep_fixed_point, EpSolution};
pub use toy::GaussianToy;
