//! Dropout Bayesian neural networks trained by minimising reparametrised
//! black-box alpha-divergence (BB-alpha) energies.
//!
//! The crate has two halves that share nothing but scalar kernels:
//!
//! - A small fully-connected network stack ([`net`], [`objective`],
//!   [`uncertainty`], [`harness`]) that trains MLPs whose approximate
//!   posterior is induced by dropout masks, using the log-sum-exp
//!   alpha-objective over `K` stochastic forward passes. Prediction is
//!   MC dropout; the [`uncertainty`] module adds fast-gradient-sign
//!   attacks and entropy-based detection sweeps.
//! - A 1-D Gaussian laboratory ([`divergences`]) with closed-form
//!   alpha-divergences, adaptive quadrature, the cavity reparametrisation
//!   that links the BB-alpha energy to a Renyi divergence term, and a
//!   conjugate power-EP solver. Its single job is to falsify the energy
//!   identities numerically before they are trusted at network scale.
//!
//! All network training runs in `f64` (the gradient checks in the test
//! suite need the headroom). The closed-form math in [`divergences`] and
//! the stable reductions in [`numerics`] are generic over [`real::Real`],
//! with `f64` aliases exported from the crate root.

pub mod divergences;
pub mod error;
pub mod harness;
pub mod net;
pub mod numerics;
pub mod objective;
pub mod real;
pub mod uncertainty;

pub use error::{Error, Result};

/// Scalar type used by the network/training stack.
pub type Scalar = f64;

/// 1-D Gaussian with the crate-default scalar.
pub type Gaussian1D = divergences::Gaussian<Scalar>;
/// Natural-parameter form of a 1-D Gaussian with the crate-default scalar.
pub type ExpFamParam = divergences::NaturalParams<Scalar>;
/// Conjugate Gaussian toy model with the crate-default scalar.
pub type ToyModel = divergences::GaussianToy<Scalar>;
