//! Variational Bayesian updates on exponential-family densities.
//!
//! This crate implements a measurement (Bayesian) update for densities of the
//! form `p(x) = exp(c(x)'theta - psi(theta))`, where the natural statistics
//! `c` are monomials. Given a prior member of the family and a (generally
//! non-conjugate) negative log-likelihood, the posterior is approximated by
//! the family member minimizing the alpha-Renyi divergence from the true
//! posterior, found by Riemannian gradient descent under the Fisher metric.
//!
//! Everything expensive reduces to expectations under `p_theta`, which are
//! evaluated with a nested Gauss-Patterson sparse grid mapped to `R^d` through
//! the inverse error function and recentered on the current density by an
//! affine bijection `x = mu + sqrt(2) L y`.
//!
//! Module tour:
//!
//! - [`quadrature`]: sparse grids and raw integration over `R^d`
//! - [`expfam`]: the family itself — log-partition, moments, Fisher matrix
//! - [`posterior`]: measurement models and the unnormalized Bayes posterior
//! - [`renyi`]: divergences, Riemannian gradients, and the update iteration
//! - [`propagate`]: predictive step for polynomial SDEs between measurements
//! - [`baselines`]: sigma-point and particle reference updates
//! - [`metrics`]: dense density grids, Hellinger and KL distances
//!
//! The crate is `no_std`-compatible (requires `alloc`); the default `std`
//! feature only adds wall-clock timestamps to optimization traces. All
//! transcendental functions are routed through `libm` so results are
//! bit-reproducible across platforms and feature sets.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod baselines;
mod error;
pub mod expfam;
pub(crate) mod math;
pub mod metrics;
pub mod posterior;
pub mod propagate;
pub mod quadrature;
pub mod renyi;
pub(crate) mod solver;

pub use error::Error;

/// Re-exported for downstream crates that build on the public matrix types.
pub use nalgebra;

/// Crate-wide result type.
pub type Result<T> = core::result::Result<T, Error>;
