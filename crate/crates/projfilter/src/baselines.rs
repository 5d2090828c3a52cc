//! Reference Bayesian-update approximations: unscented and Gauss-Hermite
//! sigma-point measurement updates, and particle importance weighting with
//! systematic resampling.
//!
//! All randomness flows from a caller-supplied seed through a ChaCha20
//! stream (a counter-based generator) and a Box-Muller transform, so
//! particle sets are bit-reproducible across platforms.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::math;
use crate::posterior::{LikelihoodModel, MeasurementFn, SIN_MODEL_SIGMA};
use crate::{Error, Result};

/// Gaussian state belief `N(mu, sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        if sigma.nrows() != mu.len() || sigma.ncols() != mu.len() {
            return Err(Error::invalid("belief covariance shape mismatch"));
        }
        if sigma.clone().cholesky().is_none() {
            return Err(Error::NotSpd {
                context: String::from("belief covariance"),
            });
        }
        Ok(Self { mu, sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Unscented-transform scaling parameters with the conventional weights.
/// Hellinger comparisons are sensitive to these at the 1e-2 level, so runs
/// record them in their output metadata.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaScaling {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for SigmaScaling {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta: 2.0,
            kappa: 0.0,
        }
    }
}

/// A measurement in the additive-Gaussian form `z = g(x) + v`, `v ~ N(0, R)`,
/// which is what the sigma-point updates consume.
pub struct SigmaMeasurement {
    pub g: Arc<MeasurementFn>,
    pub r: DMatrix<f64>,
    pub z: DVector<f64>,
}

impl SigmaMeasurement {
    /// Use an additive-Gaussian likelihood natively: `z = y`.
    pub fn from_model(model: &LikelihoodModel, y: &[f64]) -> Result<Self> {
        match model {
            LikelihoodModel::AdditiveGaussian { h, r, .. } => Ok(Self {
                g: h.clone(),
                r: r.clone(),
                z: DVector::from_row_slice(y),
            }),
            _ => Err(Error::invalid(
                "sigma-point updates need an additive-Gaussian measurement",
            )),
        }
    }

    /// Pseudo-measurement for the sinusoidal model: observe
    /// `0 = sin(x - y) + v` with `v ~ N(0, sigma_y^2 I)`.
    pub fn sin_pseudo(y: &[f64]) -> Self {
        let d = y.len();
        let y_owned: Vec<f64> = y.to_vec();
        let g: Arc<MeasurementFn> = Arc::new(move |x: &[f64]| {
            x.iter()
                .zip(&y_owned)
                .map(|(xj, yj)| math::sin(xj - yj))
                .collect()
        });
        Self {
            g,
            r: DMatrix::identity(d, d) * (SIN_MODEL_SIGMA * SIN_MODEL_SIGMA),
            z: DVector::zeros(d),
        }
    }
}

fn sigma_point_update(
    belief: &GaussianBelief,
    points: &[DVector<f64>],
    w_mean: &[f64],
    w_cov: &[f64],
    meas: &SigmaMeasurement,
) -> Result<GaussianBelief> {
    let d = belief.dim();
    let dz = meas.z.len();
    let mut images = Vec::with_capacity(points.len());
    for p in points {
        let gi = (meas.g)(p.as_slice());
        if gi.len() != dz || gi.iter().any(|v| !v.is_finite()) {
            return Err(Error::BaselineFailure {
                context: String::from("measurement function not finite at a sigma point"),
            });
        }
        images.push(DVector::from_vec(gi));
    }
    let mut z_hat = DVector::zeros(dz);
    for (w, gi) in w_mean.iter().zip(&images) {
        z_hat.axpy(*w, gi, 1.0);
    }
    let mut s = meas.r.clone();
    let mut cross = DMatrix::zeros(d, dz);
    for ((w, gi), p) in w_cov.iter().zip(&images).zip(points) {
        let dz_i = gi - &z_hat;
        let dx_i = p - &belief.mu;
        s += &dz_i * dz_i.transpose() * *w;
        cross += &dx_i * dz_i.transpose() * *w;
    }
    let s_chol = s.clone().cholesky().ok_or_else(|| Error::BaselineFailure {
        context: String::from("innovation covariance singular"),
    })?;
    // K = C S^-1 via S K' = C'
    let gain = s_chol.solve(&cross.transpose()).transpose();
    let mu = &belief.mu + &gain * (&meas.z - &z_hat);
    // covariance in the Joseph-style subtractive form
    // sigma - C K' - K C' + K S K'
    let ksk = &gain * &s * gain.transpose();
    let ck = &cross * gain.transpose();
    let mut sigma = &belief.sigma - &ck - ck.transpose() + ksk;
    for a in 0..d {
        for b in a + 1..d {
            let v = 0.5 * (sigma[(a, b)] + sigma[(b, a)]);
            sigma[(a, b)] = v;
            sigma[(b, a)] = v;
        }
    }
    GaussianBelief::new(mu, sigma).map_err(|_| Error::BaselineFailure {
        context: String::from("updated covariance not positive definite"),
    })
}

/// Standard unscented measurement update with `2d + 1` sigma points.
pub fn unscented_update(
    belief: &GaussianBelief,
    meas: &SigmaMeasurement,
    scaling: SigmaScaling,
) -> Result<GaussianBelief> {
    let d = belief.dim();
    let df = d as f64;
    let lambda = scaling.alpha * scaling.alpha * (df + scaling.kappa) - df;
    let c = df + lambda;
    if c <= 0.0 {
        return Err(Error::invalid("sigma scaling gives a nonpositive spread"));
    }
    let l = belief
        .sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotSpd {
            context: String::from("belief covariance"),
        })?
        .unpack()
        * math::sqrt(c);
    let mut points = Vec::with_capacity(2 * d + 1);
    let mut w_mean = Vec::with_capacity(2 * d + 1);
    let mut w_cov = Vec::with_capacity(2 * d + 1);
    points.push(belief.mu.clone());
    w_mean.push(lambda / c);
    w_cov.push(lambda / c + 1.0 - scaling.alpha * scaling.alpha + scaling.beta);
    for j in 0..d {
        let col = l.column(j);
        points.push(&belief.mu + &col);
        points.push(&belief.mu - &col);
        for _ in 0..2 {
            w_mean.push(0.5 / c);
            w_cov.push(0.5 / c);
        }
    }
    sigma_point_update(belief, &points, &w_mean, &w_cov, meas)
}

/// Nodes and weights of the `order`-point Gauss-Hermite rule for the
/// standard normal weight (probabilists' convention), via Golub-Welsch on
/// the Jacobi matrix.
pub fn gauss_hermite_1d(order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if order == 0 {
        return Err(Error::invalid("Gauss-Hermite order must be positive"));
    }
    let mut jacobi = DMatrix::zeros(order, order);
    for k in 1..order {
        let v = math::sqrt(k as f64);
        jacobi[(k - 1, k)] = v;
        jacobi[(k, k - 1)] = v;
    }
    let eigen = nalgebra::SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|i| {
            let v0 = eigen.eigenvectors[(0, i)];
            (eigen.eigenvalues[i], v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite eigenvalues"));
    Ok(pairs.into_iter().unzip())
}

/// Gauss-Hermite sigma-point update with a full tensor product of
/// `order^d` points.
pub fn gauss_hermite_update(
    belief: &GaussianBelief,
    meas: &SigmaMeasurement,
    order: usize,
) -> Result<GaussianBelief> {
    let d = belief.dim();
    let (nodes, weights) = gauss_hermite_1d(order)?;
    let l = belief
        .sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotSpd {
            context: String::from("belief covariance"),
        })?
        .unpack();
    let total = order.pow(d as u32);
    let mut points = Vec::with_capacity(total);
    let mut w = Vec::with_capacity(total);
    let mut idx = vec![0usize; d];
    loop {
        let mut u = DVector::zeros(d);
        let mut wi = 1.0;
        for j in 0..d {
            u[j] = nodes[idx[j]];
            wi *= weights[idx[j]];
        }
        points.push(&belief.mu + &l * u);
        w.push(wi);
        let mut axis = 0;
        loop {
            idx[axis] += 1;
            if idx[axis] < order {
                break;
            }
            idx[axis] = 0;
            axis += 1;
            if axis == d {
                return sigma_point_update(belief, &points, &w, &w, meas);
            }
        }
    }
}

/// Weighted or uniformly-weighted particles in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub dim: usize,
    /// Flat `len * dim` coordinates.
    pub points: Vec<f64>,
    /// Nonnegative, summing to one.
    pub weights: Vec<f64>,
    pub seed: u64,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }
}

fn uniform01(rng: &mut ChaCha20Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Box-Muller pair from two uniforms; the first draw is kept away from zero
/// so the log is finite.
fn standard_normal_pair(rng: &mut ChaCha20Rng) -> (f64, f64) {
    let u1 = ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = uniform01(rng);
    let radius = math::sqrt(-2.0 * math::ln(u1));
    let angle = core::f64::consts::TAU * u2;
    (radius * math::cos(angle), radius * math::sin(angle))
}

/// Draw `n` samples from the belief (seeded, reproducible), weight them by
/// `exp(-ell(x, y))` in the log domain, and resample systematically to
/// uniform weights.
pub fn particle_update(
    belief: &GaussianBelief,
    model: &LikelihoodModel,
    y: &[f64],
    n_particles: usize,
    seed: u64,
) -> Result<ParticleSet> {
    if n_particles == 0 {
        return Err(Error::invalid("need at least one particle"));
    }
    let d = belief.dim();
    let l = belief
        .sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotSpd {
            context: String::from("belief covariance"),
        })?
        .unpack();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    // sample the prior
    let mut points = vec![0.0; n_particles * d];
    let mut normals = vec![0.0; d];
    for i in 0..n_particles {
        let mut j = 0;
        while j < d {
            let (a, b) = standard_normal_pair(&mut rng);
            normals[j] = a;
            if j + 1 < d {
                normals[j + 1] = b;
            }
            j += 2;
        }
        for row in 0..d {
            let mut v = belief.mu[row];
            for col in 0..=row {
                v += l[(row, col)] * normals[col];
            }
            points[i * d + row] = v;
        }
    }

    // log-domain importance weights
    let mut log_w = vec![0.0; n_particles];
    for i in 0..n_particles {
        let x = &points[i * d..(i + 1) * d];
        let ell = model.eval(x, y);
        log_w[i] = if ell.is_nan() { f64::NEG_INFINITY } else { -ell };
    }
    let terms: Vec<(f64, f64)> = log_w.iter().map(|&lw| (lw, 1.0)).collect();
    let norm = math::signed_log_sum_exp(&terms).ok_or(Error::DegenerateParticles)?;
    let weights: Vec<f64> = log_w.iter().map(|&lw| math::exp(lw - norm)).collect();

    // systematic resampling: one uniform offset over the cumulative sum
    let offset = uniform01(&mut rng) / n_particles as f64;
    let mut resampled = vec![0.0; n_particles * d];
    let mut cumulative = weights[0];
    let mut src = 0usize;
    for k in 0..n_particles {
        let target = offset + k as f64 / n_particles as f64;
        while cumulative < target && src + 1 < n_particles {
            src += 1;
            cumulative += weights[src];
        }
        resampled[k * d..(k + 1) * d].copy_from_slice(&points[src * d..(src + 1) * d]);
    }

    Ok(ParticleSet {
        dim: d,
        points: resampled,
        weights: vec![1.0 / n_particles as f64; n_particles],
        seed,
    })
}

/// Expected-vs-realized offspring counts of systematic resampling; exposed
/// for tests and diagnostics. Returns pairs `(n * w_i, realized_i)`.
pub fn offspring_counts(
    weights: &[f64],
    resampled_indices: &[usize],
) -> Vec<(f64, usize)> {
    let n = resampled_indices.len() as f64;
    let mut realized = vec![0usize; weights.len()];
    for &i in resampled_indices {
        realized[i] += 1;
    }
    weights
        .iter()
        .zip(realized)
        .map(|(w, r)| (w * n, r))
        .collect()
}

/// Kalman measurement update for an exactly linear measurement `z = H x + v`;
/// the closed form both sigma-point updates must reproduce on linear models.
pub fn kalman_update(
    belief: &GaussianBelief,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    z: &DVector<f64>,
) -> Result<GaussianBelief> {
    let s = h * &belief.sigma * h.transpose() + r;
    let s_chol = s.cholesky().ok_or_else(|| Error::BaselineFailure {
        context: String::from("innovation covariance singular"),
    })?;
    let cross = &belief.sigma * h.transpose();
    let gain = s_chol.solve(&cross.transpose()).transpose();
    let mu = &belief.mu + &gain * (z - h * &belief.mu);
    let sigma = &belief.sigma - &gain * h * &belief.sigma;
    GaussianBelief::new(mu, sigma).map_err(|e| Error::BaselineFailure {
        context: format!("{e}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn linear_meas(a: &DMatrix<f64>, r: &DMatrix<f64>, z: &[f64]) -> SigmaMeasurement {
        let a = a.clone();
        SigmaMeasurement {
            g: Arc::new(move |x: &[f64]| {
                (&a * DVector::from_row_slice(x)).iter().copied().collect()
            }),
            r: r.clone(),
            z: DVector::from_row_slice(z),
        }
    }

    fn test_belief() -> GaussianBelief {
        GaussianBelief::new(
            DVector::from_vec(vec![0.3, -0.2]),
            DMatrix::from_row_slice(2, 2, &[1.2, 0.3, 0.3, 0.9]),
        )
        .unwrap()
    }

    #[test]
    fn sigma_point_updates_are_exact_on_linear_models() {
        let belief = test_belief();
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.3, 1.1]);
        let r = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.4]);
        let z = [0.7, -0.1];
        let meas = linear_meas(&a, &r, &z);
        let exact = kalman_update(&belief, &a, &r, &DVector::from_row_slice(&z)).unwrap();

        let ut = unscented_update(&belief, &meas, SigmaScaling::default()).unwrap();
        let gh = gauss_hermite_update(&belief, &meas, 3).unwrap();
        for got in [ut, gh] {
            assert!((got.mu - &exact.mu).norm() < 1e-10);
            assert!((got.sigma - &exact.sigma).norm() < 1e-9);
        }
    }

    #[test]
    fn gauss_hermite_rule_is_exact_for_low_moments() {
        let (nodes, weights) = gauss_hermite_1d(17).unwrap();
        let moment = |k: u32| -> f64 {
            nodes
                .iter()
                .zip(&weights)
                .map(|(x, w)| w * libm::pow(*x, k as f64))
                .sum()
        };
        assert_relative_eq!(moment(0), 1.0, epsilon = 1e-12);
        assert!(moment(1).abs() < 1e-12);
        assert_relative_eq!(moment(2), 1.0, epsilon = 1e-12);
        assert_relative_eq!(moment(4), 3.0, epsilon = 1e-11);
        assert_relative_eq!(moment(6), 15.0, epsilon = 1e-10);
    }

    #[test]
    fn singular_innovation_is_reported_not_fatal() {
        let belief = test_belief();
        let meas = SigmaMeasurement {
            g: Arc::new(|_: &[f64]| vec![0.0, 0.0]),
            r: DMatrix::zeros(2, 2),
            z: DVector::zeros(2),
        };
        assert!(matches!(
            unscented_update(&belief, &meas, SigmaScaling::default()),
            Err(Error::BaselineFailure { .. })
        ));
    }

    #[test]
    fn particles_are_seed_deterministic() {
        let belief = test_belief();
        let model = crate::posterior::sin_model();
        let a = particle_update(&belief, &model, &[0.0, 0.0], 2000, 42).unwrap();
        let b = particle_update(&belief, &model, &[0.0, 0.0], 2000, 42).unwrap();
        assert_eq!(a, b);
        let c = particle_update(&belief, &model, &[0.0, 0.0], 2000, 43).unwrap();
        assert_ne!(a.points, c.points);
    }

    #[test]
    fn flat_likelihood_resamples_the_prior_draw() {
        let belief = test_belief();
        let model = LikelihoodModel::custom(Box::new(|_, _| 0.0));
        let n = 512;
        let set = particle_update(&belief, &model, &[], n, 7).unwrap();
        assert_eq!(set.len(), n);
        assert!(set
            .weights
            .iter()
            .all(|w| (w - 1.0 / n as f64).abs() < 1e-15));
        // with uniform weights systematic resampling keeps each draw exactly
        // once: the output is a permutation of the prior sample
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mut original: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let (a, b) = standard_normal_pair(&mut rng);
                (a, b)
            })
            .collect();
        let l = belief.sigma.clone().cholesky().unwrap().unpack();
        for p in original.iter_mut() {
            let x0 = belief.mu[0] + l[(0, 0)] * p.0;
            let x1 = belief.mu[1] + l[(1, 0)] * p.0 + l[(1, 1)] * p.1;
            *p = (x0, x1);
        }
        let mut got: Vec<(f64, f64)> = (0..n).map(|i| (set.point(i)[0], set.point(i)[1])).collect();
        original.sort_by(|a, b| a.partial_cmp(b).unwrap());
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(original, got);
    }

    #[test]
    fn systematic_resampling_offspring_within_one() {
        // reconstruct the pre-resampling weights for the same seed, then
        // check the realized offspring of every particle is within +-1 of
        // its expectation n * w_i
        let belief = GaussianBelief::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        let model = LikelihoodModel::custom(Box::new(|x, _| 0.5 * x[0] * x[0]));
        let n = 4096;
        let set = particle_update(&belief, &model, &[], n, 99).unwrap();
        assert_eq!(set.len(), n);

        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let originals: Vec<f64> = (0..n).map(|_| standard_normal_pair(&mut rng).0).collect();
        let log_w: Vec<f64> = originals.iter().map(|x| -0.5 * x * x).collect();
        let terms: Vec<(f64, f64)> = log_w.iter().map(|&lw| (lw, 1.0)).collect();
        let norm = math::signed_log_sum_exp(&terms).unwrap();
        let weights: Vec<f64> = log_w.iter().map(|&lw| math::exp(lw - norm)).collect();

        // map resampled points back to source indices (copies are bit-exact)
        let mut index_of = alloc::collections::BTreeMap::new();
        for (i, x) in originals.iter().enumerate() {
            index_of.insert(x.to_bits(), i);
        }
        let indices: Vec<usize> = (0..n)
            .map(|k| index_of[&set.point(k)[0].to_bits()])
            .collect();
        for (expected, realized) in offspring_counts(&weights, &indices) {
            assert!(
                (expected - realized as f64).abs() <= 1.0 + 1e-9,
                "expected {expected}, realized {realized}"
            );
        }
    }

    #[test]
    fn all_zero_weights_error() {
        let belief = test_belief();
        let model = LikelihoodModel::custom(Box::new(|_, _| f64::INFINITY));
        assert!(matches!(
            particle_update(&belief, &model, &[], 100, 1),
            Err(Error::DegenerateParticles)
        ));
    }
}
