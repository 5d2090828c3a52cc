//! Measurement models and the unnormalized Bayes posterior.
//!
//! Given a prior `p_prior` in the family and a negative log-likelihood
//! `ell(x, y)`, the posterior after observing `y` is
//!
//! ```text
//! q(x) = p_prior(x) * exp(-ell(x, y) - Z),    Z = log E_prior[exp(-ell)]
//! ```
//!
//! Additive constants in `ell` are allowed; they cancel between `Z` and
//! `log q`. All densities are treated as supported on the whole of `R^d`.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::expfam::{BijectionParams, MomentVector, NaturalParams, NodeStats, StatisticsBasis};
use crate::math;
use crate::quadrature::SparseGrid;
use crate::{Error, Result};

/// Standard deviation of the sinusoidal measurement model.
pub const SIN_MODEL_SIGMA: f64 = 0.5;
/// Height offset of the range-bearing tracking model.
pub const TRACKING_Z0: f64 = 0.2;
/// Noise covariance diagonal of the tracking model.
pub const TRACKING_R_DIAG: [f64; 3] = [2e-2, 4e-1, 4e-1];

type NllFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;
/// Shared measurement function `h(x)`; `Arc` so sigma-point baselines can
/// reuse the same closure the likelihood wraps.
pub type MeasurementFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// A negative log-likelihood model `ell(x, y)`.
pub enum LikelihoodModel {
    /// `ell(x) = c(x)' theta_ell`: conjugate to the family; the measurement
    /// value is already folded into the coefficients.
    LinearInC {
        basis: StatisticsBasis,
        theta_ell: DVector<f64>,
    },
    /// `ell(x, y) = (y - h(x))' R^-1 (y - h(x)) / 2`.
    AdditiveGaussian {
        h: alloc::sync::Arc<MeasurementFn>,
        r: DMatrix<f64>,
        r_chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    },
    /// Arbitrary negative log-likelihood.
    Custom { nll: Box<NllFn> },
}

impl core::fmt::Debug for LikelihoodModel {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            LikelihoodModel::LinearInC { theta_ell, .. } => {
                write!(f, "LinearInC({} coefficients)", theta_ell.len())
            }
            LikelihoodModel::AdditiveGaussian { r, .. } => {
                write!(f, "AdditiveGaussian({}-dim measurement)", r.nrows())
            }
            LikelihoodModel::Custom { .. } => write!(f, "Custom"),
        }
    }
}

impl LikelihoodModel {
    pub fn linear_in_c(basis: StatisticsBasis, theta_ell: DVector<f64>) -> Result<Self> {
        if theta_ell.len() != basis.len() {
            return Err(Error::invalid("theta_ell length must match the basis"));
        }
        Ok(LikelihoodModel::LinearInC { basis, theta_ell })
    }

    pub fn additive_gaussian(
        h: alloc::sync::Arc<MeasurementFn>,
        r: DMatrix<f64>,
    ) -> Result<Self> {
        let r_chol = r.clone().cholesky().ok_or_else(|| Error::NotSpd {
            context: String::from("measurement noise covariance"),
        })?;
        Ok(LikelihoodModel::AdditiveGaussian { h, r, r_chol })
    }

    pub fn custom(nll: Box<NllFn>) -> Self {
        LikelihoodModel::Custom { nll }
    }

    /// Evaluate `ell(x, y)`. May return non-finite values at singular points;
    /// quadrature surfaces those as errors carrying the node index.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            LikelihoodModel::LinearInC { basis, theta_ell } => basis.eval(x).dot(theta_ell),
            LikelihoodModel::AdditiveGaussian { h, r_chol, .. } => {
                let hx = h(x);
                let mut innov = DVector::zeros(hx.len());
                for (j, v) in hx.iter().enumerate() {
                    innov[j] = y[j] - v;
                }
                let solved = r_chol.solve(&innov);
                0.5 * innov.dot(&solved)
            }
            LikelihoodModel::Custom { nll } => nll(x, y),
        }
    }
}

/// Componentwise sinusoidal model `ell(x, y) = |sin(x - y)|^2 / (2 sigma^2)`
/// with `sigma = 1/2`; its posterior against a Gaussian prior is multimodal.
pub fn sin_model() -> LikelihoodModel {
    LikelihoodModel::custom(Box::new(|x, y| {
        let inv = 1.0 / (2.0 * SIN_MODEL_SIGMA * SIN_MODEL_SIGMA);
        let mut s = 0.0;
        for (xj, yj) in x.iter().zip(y) {
            let v = math::sin(xj - yj);
            s += v * v;
        }
        inv * s
    }))
}

/// Range, azimuth, and elevation of a planar position at height `z0`:
/// `h(x) = [sqrt(x1^2 + x2^2 + z0^2), atan(x1/x2), atan(z0/|x|)]`.
///
/// The azimuth uses the scalar principal-value arctangent rather than the
/// quadrant-aware form; measurements generated through the same function
/// keep the update self-consistent on the tested region. Returns NaN
/// components at `|x| = 0`, where the bearing is undefined.
pub fn tracking_measurement(x: &[f64]) -> Vec<f64> {
    let norm = math::sqrt(x[0] * x[0] + x[1] * x[1]);
    let range = math::sqrt(norm * norm + TRACKING_Z0 * TRACKING_Z0);
    if norm == 0.0 {
        return alloc::vec![range, f64::NAN, f64::NAN];
    }
    alloc::vec![
        range,
        math::atan(x[0] / x[1]),
        math::atan(TRACKING_Z0 / norm)
    ]
}

/// Range-bearing tracking model with `z0 = 0.2` and
/// `R = diag(2e-2, 4e-1, 4e-1)`.
pub fn tracking_model() -> LikelihoodModel {
    let r = DMatrix::from_diagonal(&DVector::from_row_slice(&TRACKING_R_DIAG));
    LikelihoodModel::additive_gaussian(alloc::sync::Arc::new(|x: &[f64]| tracking_measurement(x)), r)
        .expect("diagonal R is SPD")
}

/// A Bayesian update problem: prior, measurement, and likelihood model.
#[derive(Debug)]
pub struct PosteriorSpec {
    pub basis: StatisticsBasis,
    pub prior: NaturalParams,
    pub prior_xi: BijectionParams,
    pub y: Vec<f64>,
    pub model: LikelihoodModel,
}

/// A [`PosteriorSpec`] with its prior-grid quantities cached:
/// `psi(theta_prior)`, the log-normalizer `Z`, and a fixed node
/// representation of `q` on the prior bijection (statistics, normalized
/// signed weights, per-node `log q`, and the posterior moments `E_q[c]`).
/// The prior bijection is where `q`'s mass is anchored, so these stay valid
/// while the optimization moves its own nodes.
#[derive(Debug)]
pub struct Posterior {
    spec: PosteriorSpec,
    psi_prior: f64,
    z: f64,
    prior_stats: NodeStats,
    q_weights: Vec<f64>,
    log_q_prior: Vec<f64>,
    eta_one: MomentVector,
}

impl PosteriorSpec {
    /// Cache the prior-grid quantities, computing `Z` in the log domain.
    pub fn prepare(self, grid: &SparseGrid) -> Result<Posterior> {
        let prior_stats = NodeStats::build(&self.basis, grid, &self.prior_xi)?;
        let ell_prior = eval_ell(&self.model, &self.y, &prior_stats)?;
        let psi_prior = prior_stats.log_partition(&self.prior)?;
        let neg_ell: Vec<f64> = ell_prior.iter().map(|v| -v).collect();
        let z = prior_stats
            .log_expectation_exp(&self.prior, &neg_ell)
            .map_err(|_| Error::MeasurementInconsistency)?;
        // declare inconsistency when the evidence, in direct space, would
        // underflow to zero (no likelihood mass where the prior lives)
        if !z.is_finite() || z <= math::ln(f64::MIN_POSITIVE) {
            return Err(Error::MeasurementInconsistency);
        }
        // fixed representation of q on the prior nodes
        let prior_dots = prior_stats.stat_dot(&self.prior);
        let log_q_prior: Vec<f64> = (0..prior_stats.len())
            .map(|i| prior_dots[i] - psi_prior - ell_prior[i] - z)
            .collect();
        let q_terms: Vec<(f64, f64)> = prior_stats
            .weight_terms()
            .iter()
            .zip(&log_q_prior)
            .map(|(&(la, sg), &lq)| (la + lq, sg))
            .collect();
        let q_norm = math::signed_log_sum_exp(&q_terms).ok_or(Error::MeasurementInconsistency)?;
        let q_weights = math::normalized_signed_weights(&q_terms, q_norm);
        let eta_one =
            MomentVector(prior_stats.stats() * nalgebra::DVector::from_vec(q_weights.clone()));
        Ok(Posterior {
            spec: self,
            psi_prior,
            z,
            prior_stats,
            q_weights,
            log_q_prior,
            eta_one,
        })
    }
}

/// Evaluate `ell(., y)` at every cached node, rejecting non-finite values.
pub(crate) fn eval_ell(model: &LikelihoodModel, y: &[f64], stats: &NodeStats) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(stats.len());
    for (i, x) in stats.points().enumerate() {
        let v = model.eval(x, y);
        if !v.is_finite() {
            return Err(Error::NonFiniteIntegrand { index: i });
        }
        out.push(v);
    }
    Ok(out)
}

impl Posterior {
    pub fn spec(&self) -> &PosteriorSpec {
        &self.spec
    }

    pub fn basis(&self) -> &StatisticsBasis {
        &self.spec.basis
    }

    pub fn prior(&self) -> &NaturalParams {
        &self.spec.prior
    }

    pub fn prior_xi(&self) -> &BijectionParams {
        &self.spec.prior_xi
    }

    pub fn measurement(&self) -> &[f64] {
        &self.spec.y
    }

    pub fn model(&self) -> &LikelihoodModel {
        &self.spec.model
    }

    /// Cached quadrature log-partition of the prior.
    pub fn psi_prior(&self) -> f64 {
        self.psi_prior
    }

    /// Node statistics under the prior bijection.
    pub fn prior_stats(&self) -> &NodeStats {
        &self.prior_stats
    }

    /// Normalized signed weights representing `q` on the prior nodes.
    pub fn q_weights(&self) -> &[f64] {
        &self.q_weights
    }

    /// `log q` at the prior nodes.
    pub fn log_q_prior(&self) -> &[f64] {
        &self.log_q_prior
    }

    /// Posterior moments `E_q[c]`, the KL moment-matching target; fixed
    /// once the posterior is prepared.
    pub fn eta_one(&self) -> &MomentVector {
        &self.eta_one
    }

    /// Cached log-normalizer `Z = log E_prior[exp(-ell(., y))]`.
    pub fn log_normalizer(&self) -> f64 {
        self.z
    }

    /// `log q(x)` up to quadrature-level normalization error:
    /// `c(x)' theta_prior - psi_prior - ell(x, y) - Z`.
    pub fn log_q_unnormalized(&self, x: &[f64]) -> f64 {
        let c = self.spec.basis.eval(x);
        c.dot(&self.spec.prior.0) - self.psi_prior - self.spec.model.eval(x, &self.spec.y) - self.z
    }
}
