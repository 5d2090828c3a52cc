//! The exponential family `EM(c)` with monomial natural statistics.
//!
//! A member is `p_theta(x) = exp(c(x)'theta - psi(theta))` where `c` collects
//! all monomials `x^i` with `1 <= |i| <= max_order`. The log-partition
//! `psi`, the moment vector `eta = grad psi`, and the Fisher matrix
//! `g = hess psi` are evaluated by sparse-grid quadrature after relocating
//! the nodes with an affine bijection `x = mu + sqrt(2) L y` that covers the
//! current density's high-mass region.
//!
//! Because the quadrature approximation of `psi` is a finite log-sum-exp,
//! the quadrature moments and covariance of `c` are *exactly* its first and
//! second derivatives, which keeps finite-difference identities tight.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::math;
use crate::quadrature::SparseGrid;
use crate::{Error, Result};

/// Eigenvalue floor below which the Fisher matrix is Tikhonov-shifted.
pub const FISHER_EIGENVALUE_FLOOR: f64 = 1e-9;

/// Ordered monomial multi-indices defining the natural statistics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatisticsBasis {
    dim: usize,
    max_order: u32,
    indices: Vec<Vec<u32>>,
    /// position of the first-order monomial `x_j`
    first_order: Vec<usize>,
    /// position of the monomial `x_j * x_k`, flattened over `j * dim + k`
    second_order: Vec<usize>,
}

/// All multi-indices with `1 <= |i| <= max_order` in graded lexicographic
/// order (grade ascending, exponent tuple descending within a grade), e.g.
/// for `dim = 2, max_order = 2`: `x1, x2, x1^2, x1 x2, x2^2`.
pub fn build_basis(dim: usize, max_order: u32) -> Result<StatisticsBasis> {
    if dim == 0 {
        return Err(Error::invalid("basis dimension must be >= 1"));
    }
    if max_order < 2 {
        return Err(Error::invalid("max_order must be >= 2"));
    }
    let mut indices = Vec::new();
    let mut scratch = vec![0u32; dim];
    for grade in 1..=max_order {
        push_compositions(grade, 0, &mut scratch, &mut indices);
    }
    let position = |target: &[u32]| indices.iter().position(|i| i == target).unwrap();
    let mut first_order = Vec::with_capacity(dim);
    for j in 0..dim {
        let mut e = vec![0u32; dim];
        e[j] = 1;
        first_order.push(position(&e));
    }
    let mut second_order = vec![0usize; dim * dim];
    for j in 0..dim {
        for k in 0..dim {
            let mut e = vec![0u32; dim];
            e[j] += 1;
            e[k] += 1;
            second_order[j * dim + k] = position(&e);
        }
    }
    Ok(StatisticsBasis {
        dim,
        max_order,
        indices,
        first_order,
        second_order,
    })
}

fn push_compositions(remaining: u32, axis: usize, scratch: &mut [u32], out: &mut Vec<Vec<u32>>) {
    if axis == scratch.len() - 1 {
        scratch[axis] = remaining;
        out.push(scratch.to_vec());
        return;
    }
    for v in (0..=remaining).rev() {
        scratch[axis] = v;
        push_compositions(remaining - v, axis + 1, scratch, out);
    }
}

impl StatisticsBasis {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_order(&self) -> u32 {
        self.max_order
    }

    /// Number of natural statistics, `C(max_order + dim, dim) - 1`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn indices(&self) -> &[Vec<u32>] {
        &self.indices
    }

    /// Position of `x_j` in the statistics vector.
    pub fn first_order_position(&self, j: usize) -> usize {
        self.first_order[j]
    }

    /// Position of `x_j x_k` in the statistics vector.
    pub fn second_order_position(&self, j: usize, k: usize) -> usize {
        self.second_order[j * self.dim + k]
    }

    /// Evaluate `c(x)`.
    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.len());
        let powers = self.power_table(x);
        self.eval_with_powers(&powers, out.as_mut_slice());
        out
    }

    /// Per-coordinate powers `x_j^p` for `p = 0..=max_order`, row-major.
    fn power_table(&self, x: &[f64]) -> Vec<f64> {
        let stride = self.max_order as usize + 1;
        let mut powers = vec![1.0; self.dim * stride];
        for j in 0..self.dim {
            let mut acc = 1.0;
            for p in 1..stride {
                acc *= x[j];
                powers[j * stride + p] = acc;
            }
        }
        powers
    }

    fn eval_with_powers(&self, powers: &[f64], out: &mut [f64]) {
        let stride = self.max_order as usize + 1;
        for (slot, idx) in out.iter_mut().zip(&self.indices) {
            let mut v = 1.0;
            for (j, &p) in idx.iter().enumerate() {
                if p > 0 {
                    v *= powers[j * stride + p as usize];
                }
            }
            *slot = v;
        }
    }
}

/// Coordinates of a family member in the natural parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalParams(pub DVector<f64>);

/// Expectations of the natural statistics, `eta_i = E_theta[c_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentVector(pub DVector<f64>);

/// Parameters of the node bijection `x = mu + sqrt(2) L y`.
#[derive(Debug, Clone, PartialEq)]
pub struct BijectionParams {
    pub mu: DVector<f64>,
    /// Lower-triangular with positive diagonal; `L L'` is the covariance the
    /// bijection adapts to.
    pub l: DMatrix<f64>,
}

impl BijectionParams {
    pub fn new(mu: DVector<f64>, l: DMatrix<f64>) -> Result<Self> {
        let d = mu.len();
        if l.nrows() != d || l.ncols() != d {
            return Err(Error::invalid("bijection matrix shape mismatch"));
        }
        for j in 0..d {
            if l[(j, j)] <= 0.0 {
                return Err(Error::NotSpd {
                    context: String::from("bijection factor needs a positive diagonal"),
                });
            }
            for k in j + 1..d {
                if l[(j, k)] != 0.0 {
                    return Err(Error::invalid("bijection factor must be lower triangular"));
                }
            }
        }
        Ok(Self { mu, l })
    }

    /// Identity bijection (standard-normal coverage).
    pub fn identity(dim: usize) -> Self {
        Self {
            mu: DVector::zeros(dim),
            l: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `log det(sqrt(2) L) = (d/2) log 2 + sum_j log L_jj`.
    pub fn log_jacobian(&self) -> f64 {
        let d = self.dim() as f64;
        let mut s = 0.5 * d * core::f64::consts::LN_2;
        for j in 0..self.dim() {
            s += math::ln(self.l[(j, j)]);
        }
        s
    }

    /// Map a quadrature node to state space.
    pub fn apply(&self, y: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for j in 0..d {
            let mut v = self.mu[j];
            for k in 0..=j.min(y.len() - 1) {
                v += core::f64::consts::SQRT_2 * self.l[(j, k)] * y[k];
            }
            out[j] = v;
        }
    }
}

/// Embed the Gaussian `N(mu, sigma)` in a basis containing all first- and
/// second-order monomials: first-order block `sigma^-1 mu`, diagonal
/// quadratic coefficients `-(sigma^-1)_jj / 2`, off-diagonal `-(sigma^-1)_jk`,
/// higher orders zero.
pub fn gaussian_to_natural(
    basis: &StatisticsBasis,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> Result<NaturalParams> {
    let d = basis.dim();
    if mu.len() != d || sigma.nrows() != d || sigma.ncols() != d {
        return Err(Error::invalid("dimension mismatch in Gaussian embedding"));
    }
    let chol = sigma.clone().cholesky().ok_or_else(|| Error::NotSpd {
        context: String::from("covariance in Gaussian embedding"),
    })?;
    let prec = chol.inverse();
    let mut theta = DVector::zeros(basis.len());
    let prec_mu = &prec * mu;
    for j in 0..d {
        theta[basis.first_order_position(j)] = prec_mu[j];
        theta[basis.second_order_position(j, j)] = -0.5 * prec[(j, j)];
        for k in j + 1..d {
            theta[basis.second_order_position(j, k)] = -prec[(j, k)];
        }
    }
    Ok(NaturalParams(theta))
}

/// Bijection parameters from the first and second raw moments:
/// `mu = (eta_xj)_j`, `Sigma = (eta_xjxk) - mu mu'`, `L = chol(Sigma)`.
pub fn moments_to_bijection(basis: &StatisticsBasis, eta: &MomentVector) -> Result<BijectionParams> {
    let d = basis.dim();
    let mut mu = DVector::zeros(d);
    for j in 0..d {
        mu[j] = eta.0[basis.first_order_position(j)];
    }
    let mut sigma = DMatrix::zeros(d, d);
    for j in 0..d {
        for k in 0..d {
            sigma[(j, k)] = eta.0[basis.second_order_position(j, k)] - mu[j] * mu[k];
        }
    }
    let chol = sigma.cholesky().ok_or(Error::MomentDegeneracy)?;
    Ok(BijectionParams { mu, l: chol.unpack() })
}

/// Seed a bijection from the quadratic block of `theta`.
///
/// Requires the quadratic-form coefficient matrix assembled from the
/// second-order entries to be negative definite (the tail-decay guard for
/// families whose quadratic term dominates); then `Sigma = (-2A)^-1` and
/// `mu = Sigma theta_1`.
pub fn bijection_from_quadratic(
    basis: &StatisticsBasis,
    theta: &NaturalParams,
) -> Result<BijectionParams> {
    let d = basis.dim();
    let mut neg2a = DMatrix::zeros(d, d);
    for j in 0..d {
        neg2a[(j, j)] = -2.0 * theta.0[basis.second_order_position(j, j)];
        for k in j + 1..d {
            let v = -theta.0[basis.second_order_position(j, k)];
            neg2a[(j, k)] = v;
            neg2a[(k, j)] = v;
        }
    }
    let chol = neg2a.cholesky().ok_or_else(|| Error::NotSpd {
        context: String::from("quadratic form of theta is not negative definite"),
    })?;
    let sigma = chol.inverse();
    let mut theta1 = DVector::zeros(d);
    for j in 0..d {
        theta1[j] = theta.0[basis.first_order_position(j)];
    }
    let mu = &sigma * theta1;
    let l = sigma
        .cholesky()
        .ok_or_else(|| Error::NotSpd {
            context: String::from("implied covariance not positive definite"),
        })?
        .unpack();
    BijectionParams::new(mu, l)
}

/// Fisher information matrix with the applied Tikhonov shift, if any.
#[derive(Debug, Clone)]
pub struct Fisher {
    pub matrix: DMatrix<f64>,
    /// Shift added to the diagonal when the smallest eigenvalue fell at or
    /// below [`FISHER_EIGENVALUE_FLOOR`].
    pub regularization: Option<f64>,
}

impl Fisher {
    /// Solve `g v = rhs` through the Cholesky factorization.
    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let chol = self.matrix.clone().cholesky().ok_or_else(|| Error::NotSpd {
            context: String::from("Fisher matrix solve"),
        })?;
        Ok(chol.solve(rhs))
    }
}

/// Cached per-node statistics for one `(basis, grid, xi)` triple.
///
/// Holds the transformed points `x_i = beta_xi(y_i)`, the statistics matrix
/// `C` with columns `c(x_i)`, and the log-magnitude/sign decomposition of the
/// quadrature weights (Smolyak combination weights can be negative). Every
/// expectation below is a signed, max-subtracted reduction over these
/// columns. Rebuild the cache whenever `xi` changes.
#[derive(Debug, Clone)]
pub struct NodeStats {
    dim: usize,
    n_nodes: usize,
    points: Vec<f64>,
    stats: DMatrix<f64>,
    /// (log |w_i| + log-jacobian, sign of w_i)
    weight_terms: Vec<(f64, f64)>,
}

impl NodeStats {
    pub fn build(basis: &StatisticsBasis, grid: &SparseGrid, xi: &BijectionParams) -> Result<Self> {
        if !grid.is_transformed() {
            return Err(Error::invalid("NodeStats requires a transformed grid"));
        }
        if grid.dim() != basis.dim() || xi.dim() != basis.dim() {
            return Err(Error::invalid("dimension mismatch building node statistics"));
        }
        let n = grid.len();
        let m = basis.len();
        let log_jac = xi.log_jacobian();
        let mut points = vec![0.0; n * grid.dim()];
        let mut stats = DMatrix::zeros(m, n);
        let mut weight_terms = Vec::with_capacity(n);
        let mut x = vec![0.0; grid.dim()];
        for (i, (y, w)) in grid.iter().enumerate() {
            xi.apply(y, &mut x);
            points[i * grid.dim()..(i + 1) * grid.dim()].copy_from_slice(&x);
            let powers = basis.power_table(&x);
            basis.eval_with_powers(&powers, stats.column_mut(i).as_mut_slice());
            weight_terms.push((math::ln(math::fabs(w)) + log_jac, if w < 0.0 { -1.0 } else { 1.0 }));
        }
        Ok(Self {
            dim: grid.dim(),
            n_nodes: n,
            points,
            stats,
            weight_terms,
        })
    }

    pub fn len(&self) -> usize {
        self.n_nodes
    }

    pub fn is_empty(&self) -> bool {
        self.n_nodes == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Transformed point `x_i`.
    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    /// Statistics matrix (column `i` equals `c(x_i)`).
    pub fn stats(&self) -> &DMatrix<f64> {
        &self.stats
    }

    /// Log-magnitude and sign of each node's weight-jacobian product.
    pub(crate) fn weight_terms(&self) -> &[(f64, f64)] {
        &self.weight_terms
    }

    /// Per-node inner products `c(x_i)' theta`.
    pub fn stat_dot(&self, theta: &NaturalParams) -> DVector<f64> {
        self.stats.tr_mul(&theta.0)
    }

    /// Unnormalized log-density terms `(log|w_i| + logJ + c_i' theta, sign)`.
    fn exponents(&self, theta: &NaturalParams) -> Vec<(f64, f64)> {
        let dots = self.stat_dot(theta);
        self.weight_terms
            .iter()
            .zip(dots.iter())
            .map(|(&(la, sg), &d)| (la + d, sg))
            .collect()
    }

    /// Quadrature log-partition `psi(theta)`.
    pub fn log_partition(&self, theta: &NaturalParams) -> Result<f64> {
        math::signed_log_sum_exp(&self.exponents(theta)).ok_or_else(|| Error::DegenerateDensity {
            context: String::from("log-partition sum is nonpositive or empty"),
        })
    }

    /// Normalized signed quadrature weights of `p_theta` and `psi(theta)`.
    pub fn normalized_weights(&self, theta: &NaturalParams) -> Result<(Vec<f64>, f64)> {
        let exps = self.exponents(theta);
        let psi = math::signed_log_sum_exp(&exps).ok_or_else(|| Error::DegenerateDensity {
            context: String::from("log-partition sum is nonpositive or empty"),
        })?;
        Ok((math::normalized_signed_weights(&exps, psi), psi))
    }

    /// First moments of the natural statistics under `p_theta`.
    pub fn moments(&self, theta: &NaturalParams) -> Result<MomentVector> {
        let (w, _) = self.normalized_weights(theta)?;
        Ok(MomentVector(&self.stats * DVector::from_vec(w)))
    }

    /// Moments and Fisher matrix (the exact gradient and Hessian of the
    /// quadrature log-partition). The Fisher matrix is symmetrized and, if
    /// its smallest eigenvalue is at or below the floor, shifted by
    /// `max(0, floor - lambda_min) + floor`.
    pub fn moments_and_fisher(&self, theta: &NaturalParams) -> Result<(MomentVector, Fisher)> {
        let (w, _) = self.normalized_weights(theta)?;
        let wv = DVector::from_vec(w);
        let eta = &self.stats * &wv;
        let m = self.stats.nrows();
        let mut centered = self.stats.clone();
        for j in 0..centered.ncols() {
            let mut col = centered.column_mut(j);
            col -= &eta;
        }
        let mut scaled = centered.clone();
        for j in 0..scaled.ncols() {
            let mut col = scaled.column_mut(j);
            col *= wv[j];
        }
        let mut g = &scaled * centered.transpose();
        // symmetrize against accumulation-order noise
        for a in 0..m {
            for b in a + 1..m {
                let v = 0.5 * (g[(a, b)] + g[(b, a)]);
                g[(a, b)] = v;
                g[(b, a)] = v;
            }
        }
        let lambda_min = nalgebra::SymmetricEigen::new(g.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let regularization = if lambda_min <= FISHER_EIGENVALUE_FLOOR {
            let shift = (FISHER_EIGENVALUE_FLOOR - lambda_min).max(0.0) + FISHER_EIGENVALUE_FLOOR;
            for a in 0..m {
                g[(a, a)] += shift;
            }
            Some(shift)
        } else {
            None
        };
        Ok((
            MomentVector(eta),
            Fisher {
                matrix: g,
                regularization,
            },
        ))
    }

    /// Normalized expectation `E_theta[phi]` for per-node values of `phi`.
    pub fn expectation(&self, theta: &NaturalParams, values: &[f64]) -> Result<f64> {
        let (w, _) = self.normalized_weights(theta)?;
        Ok(w.iter().zip(values).map(|(wi, vi)| wi * vi).sum())
    }

    /// `log E_theta[exp(v)]` with per-node log-values `v`, fully in the log
    /// domain so v may span thousands of nats.
    pub fn log_expectation_exp(&self, theta: &NaturalParams, v: &[f64]) -> Result<f64> {
        let exps = self.exponents(theta);
        let psi = math::signed_log_sum_exp(&exps).ok_or_else(|| Error::DegenerateDensity {
            context: String::from("log-partition sum is nonpositive or empty"),
        })?;
        let shifted: Vec<(f64, f64)> = exps
            .iter()
            .zip(v)
            .map(|(&(la, sg), &vi)| (la + vi, sg))
            .collect();
        let top = math::signed_log_sum_exp(&shifted).ok_or_else(|| Error::DegenerateDensity {
            context: String::from("expectation of exp underflowed to zero"),
        })?;
        Ok(top - psi)
    }
}

/// One-shot log-partition for `(basis, theta, xi, grid)`; build a
/// [`NodeStats`] cache instead when evaluating repeatedly at the same `xi`.
pub fn log_partition(
    basis: &StatisticsBasis,
    theta: &NaturalParams,
    xi: &BijectionParams,
    grid: &SparseGrid,
) -> Result<f64> {
    NodeStats::build(basis, grid, xi)?.log_partition(theta)
}

/// One-shot moments and Fisher matrix; see [`NodeStats::moments_and_fisher`].
pub fn moments_and_fisher(
    basis: &StatisticsBasis,
    theta: &NaturalParams,
    xi: &BijectionParams,
    grid: &SparseGrid,
) -> Result<(MomentVector, Fisher)> {
    NodeStats::build(basis, grid, xi)?.moments_and_fisher(theta)
}
