//! Predictive step between measurements: evolve the natural parameters by
//! the Fokker-Planck dynamics projected onto the family's tangent space,
//!
//! ```text
//! d theta^i / dt = sum_j g(theta)^{ij} E_theta[L(c_j)]
//! ```
//!
//! where `L` is the backward Kolmogorov operator of the state SDE. For
//! polynomial drift and constant diffusion, `L(c_j)` is computed once and
//! exactly by symbolic monomial arithmetic; only its expectations are
//! quadrature approximations.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::expfam::{
    moments_to_bijection, BijectionParams, NaturalParams, NodeStats, StatisticsBasis,
};
use crate::quadrature::SparseGrid;
use crate::solver::{integrate_adaptive, OdeSystem};
use crate::{Error, Result};

/// A polynomial over `R^d` as a sparse multi-index coefficient table.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    dim: usize,
    /// exponent tuple -> coefficient; zero coefficients are dropped
    terms: BTreeMap<Vec<u32>, f64>,
}

impl Polynomial {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(dim: usize, value: f64) -> Self {
        let mut p = Self::zero(dim);
        p.add_term(&vec![0; dim], value);
        p
    }

    /// The monomial `x^exponents` with the given coefficient.
    pub fn monomial(exponents: &[u32], coefficient: f64) -> Self {
        let mut p = Self::zero(exponents.len());
        p.add_term(exponents, coefficient);
        p
    }

    pub fn from_terms(dim: usize, terms: &[(Vec<u32>, f64)]) -> Result<Self> {
        let mut p = Self::zero(dim);
        for (e, c) in terms {
            if e.len() != dim {
                return Err(Error::invalid("polynomial exponent arity mismatch"));
            }
            p.add_term(e, *c);
        }
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u32], f64)> {
        self.terms.iter().map(|(e, c)| (e.as_slice(), *c))
    }

    pub fn add_term(&mut self, exponents: &[u32], coefficient: f64) {
        if coefficient == 0.0 {
            return;
        }
        let entry = self.terms.entry(exponents.to_vec()).or_insert(0.0);
        *entry += coefficient;
        if *entry == 0.0 {
            self.terms.remove(exponents);
        }
    }

    pub fn add_assign(&mut self, other: &Polynomial) {
        for (e, c) in &other.terms {
            self.add_term(e, *c);
        }
    }

    pub fn scale(&self, factor: f64) -> Polynomial {
        let mut out = Self::zero(self.dim);
        for (e, c) in &self.terms {
            out.add_term(e, c * factor);
        }
        out
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut out = Self::zero(self.dim);
        let mut scratch = vec![0u32; self.dim];
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                for j in 0..self.dim {
                    scratch[j] = ea[j] + eb[j];
                }
                out.add_term(&scratch, ca * cb);
            }
        }
        out
    }

    /// Partial derivative along `axis`.
    pub fn derivative(&self, axis: usize) -> Polynomial {
        let mut out = Self::zero(self.dim);
        let mut scratch = vec![0u32; self.dim];
        for (e, c) in &self.terms {
            if e[axis] == 0 {
                continue;
            }
            scratch.copy_from_slice(e);
            scratch[axis] -= 1;
            out.add_term(&scratch, c * e[axis] as f64);
        }
        out
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|e| e.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for (e, c) in &self.terms {
            let mut v = *c;
            for (j, &p) in e.iter().enumerate() {
                for _ in 0..p {
                    v *= x[j];
                }
            }
            total += v;
        }
        total
    }
}

/// A state SDE with polynomial drift and constant diffusion: the generator's
/// second-order coefficient matrix `a = [a_ij]` is taken directly (callers
/// convert a noise gain `rho` via `a = rho rho'`).
#[derive(Debug, Clone)]
pub struct PolynomialSde {
    drift: Vec<Polynomial>,
    diffusion: DMatrix<f64>,
}

impl PolynomialSde {
    pub fn new(drift: Vec<Polynomial>, diffusion: DMatrix<f64>) -> Result<Self> {
        let d = drift.len();
        if d == 0 {
            return Err(Error::invalid("drift must have at least one component"));
        }
        if drift.iter().any(|p| p.dim() != d) {
            return Err(Error::invalid("drift component arity mismatch"));
        }
        if diffusion.nrows() != d || diffusion.ncols() != d {
            return Err(Error::invalid("diffusion matrix shape mismatch"));
        }
        for i in 0..d {
            for j in 0..d {
                if (diffusion[(i, j)] - diffusion[(j, i)]).abs() > 1e-12 {
                    return Err(Error::NotSpd {
                        context: String::from("diffusion matrix must be symmetric"),
                    });
                }
            }
        }
        // constant diffusion must be positive semidefinite
        let min_eig = nalgebra::SymmetricEigen::new(diffusion.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -1e-10 {
            return Err(Error::NotSpd {
                context: String::from("diffusion matrix must be positive semidefinite"),
            });
        }
        Ok(Self { drift, diffusion })
    }

    pub fn dim(&self) -> usize {
        self.drift.len()
    }

    pub fn drift(&self) -> &[Polynomial] {
        &self.drift
    }

    pub fn diffusion(&self) -> &DMatrix<f64> {
        &self.diffusion
    }
}

/// The generator images `L(c_j)` for each natural statistic.
#[derive(Debug, Clone)]
pub struct GeneratorImage {
    images: Vec<Polynomial>,
}

impl GeneratorImage {
    pub fn images(&self) -> &[Polynomial] {
        &self.images
    }
}

/// Apply the backward Kolmogorov operator
/// `L(phi) = sum_i f_i d phi/dx_i + (1/2) sum_ij a_ij d^2 phi/dx_i dx_j`
/// to every natural statistic, by exact polynomial arithmetic.
pub fn apply_generator(sde: &PolynomialSde, basis: &StatisticsBasis) -> Result<GeneratorImage> {
    if sde.dim() != basis.dim() {
        return Err(Error::invalid("SDE and basis dimension mismatch"));
    }
    let d = sde.dim();
    let max_drift_degree = sde.drift.iter().map(|p| p.degree()).max().unwrap_or(0);
    let mut images = Vec::with_capacity(basis.len());
    for idx in basis.indices() {
        let c = Polynomial::monomial(idx, 1.0);
        let mut image = Polynomial::zero(d);
        for i in 0..d {
            image.add_assign(&sde.drift[i].mul(&c.derivative(i)));
        }
        for i in 0..d {
            for j in 0..d {
                let a = sde.diffusion[(i, j)];
                if a != 0.0 {
                    image.add_assign(&c.derivative(i).derivative(j).scale(0.5 * a));
                }
            }
        }
        let c_degree: u32 = idx.iter().sum();
        debug_assert!(
            image.degree() <= c_degree.saturating_sub(1) + max_drift_degree.max(1),
            "generator image degree bookkeeping violated"
        );
        images.push(image);
    }
    Ok(GeneratorImage { images })
}

/// Right-hand side of the projected Fokker-Planck ODE:
/// `g(theta)^-1 (E_theta[L(c_j)])_j`, the Fisher solve via Cholesky.
pub fn predictive_rhs(
    theta: &NaturalParams,
    stats: &NodeStats,
    gen_image: &GeneratorImage,
) -> Result<DVector<f64>> {
    let m = gen_image.images.len();
    let (_, fisher) = stats.moments_and_fisher(theta)?;
    let mut expectations = DVector::zeros(m);
    let (weights, _) = stats.normalized_weights(theta)?;
    for (j, poly) in gen_image.images.iter().enumerate() {
        let mut acc = 0.0;
        for (i, x) in stats.points().enumerate() {
            acc += weights[i] * poly.eval(x);
        }
        expectations[j] = acc;
    }
    fisher.solve(&expectations)
}

struct PredictiveFlow<'a> {
    basis: &'a StatisticsBasis,
    grid: &'a SparseGrid,
    gen_image: &'a GeneratorImage,
    stats: NodeStats,
    xi: BijectionParams,
}

impl PredictiveFlow<'_> {
    fn refresh(&mut self, theta: &NaturalParams) -> Result<()> {
        let eta = self.stats.moments(theta)?;
        match moments_to_bijection(self.basis, &eta) {
            Ok(xi) => {
                self.stats = NodeStats::build(self.basis, self.grid, &xi)?;
                self.xi = xi;
                Ok(())
            }
            // keep the previous bijection on degenerate moments
            Err(Error::MomentDegeneracy) => Ok(()),
            Err(e) => Err(e),
        }
    }
}

impl OdeSystem for PredictiveFlow<'_> {
    fn field(&mut self, y: &DVector<f64>) -> Result<DVector<f64>> {
        predictive_rhs(&NaturalParams(y.clone()), &self.stats, self.gen_image)
    }

    fn accepted(&mut self, _t: f64, y: &DVector<f64>) -> Result<()> {
        self.refresh(&NaturalParams(y.clone()))
    }
}

/// Time stepper for [`propagate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropagationSolver {
    /// `n_substeps` explicit Euler steps, bijection refreshed after each.
    Euler,
    /// Adaptive embedded Runge-Kutta over the horizon.
    AdaptiveRk,
}

/// Integrate the projected Fokker-Planck ODE over `delta_t`, refreshing the
/// bijection from the propagated moments after every substep.
pub fn propagate(
    theta: &NaturalParams,
    xi: &BijectionParams,
    sde: &PolynomialSde,
    basis: &StatisticsBasis,
    grid: &SparseGrid,
    delta_t: f64,
    n_substeps: usize,
    solver: PropagationSolver,
) -> Result<(NaturalParams, BijectionParams)> {
    if delta_t < 0.0 {
        return Err(Error::invalid("delta_t must be nonnegative"));
    }
    let gen_image = apply_generator(sde, basis)?;
    if delta_t == 0.0 || gen_image.images.iter().all(Polynomial::is_zero) {
        return Ok((theta.clone(), xi.clone()));
    }
    if n_substeps == 0 {
        return Err(Error::invalid("n_substeps must be at least 1"));
    }
    let mut flow = PredictiveFlow {
        basis,
        grid,
        gen_image: &gen_image,
        stats: NodeStats::build(basis, grid, xi)?,
        xi: xi.clone(),
    };
    match solver {
        PropagationSolver::Euler => {
            let h = delta_t / n_substeps as f64;
            let mut current = theta.clone();
            for _ in 0..n_substeps {
                let rhs = predictive_rhs(&current, &flow.stats, &gen_image)?;
                current = NaturalParams(&current.0 + rhs * h);
                if current.0.iter().any(|v| !v.is_finite()) {
                    return Err(Error::DegenerateDensity {
                        context: String::from("non-finite parameters during propagation"),
                    });
                }
                flow.refresh(&current)?;
            }
            Ok((current, flow.xi))
        }
        PropagationSolver::AdaptiveRk => {
            let y = integrate_adaptive(
                &mut flow,
                theta.0.clone(),
                delta_t,
                1e-8,
                1e-6,
                delta_t / n_substeps as f64,
                100_000,
            )?;
            Ok((NaturalParams(y), flow.xi))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::{build_basis, gaussian_to_natural};
    use crate::quadrature::{smolyak_grid, transform_to_unbounded};
    use approx::assert_relative_eq;

    fn grid(dim: usize, level: u32) -> SparseGrid {
        transform_to_unbounded(&smolyak_grid(dim, level).unwrap()).unwrap()
    }

    /// dx = -x dt + dW: generator coefficient a = 1.
    fn ou_sde() -> PolynomialSde {
        PolynomialSde::new(
            vec![Polynomial::monomial(&[1], -1.0)],
            DMatrix::identity(1, 1),
        )
        .unwrap()
    }

    #[test]
    fn generator_images_ou() {
        let basis = build_basis(1, 2).unwrap();
        let img = apply_generator(&ou_sde(), &basis).unwrap();
        // L(x) = -x
        let lx = &img.images()[0];
        assert_eq!(lx.eval(&[2.0]), -2.0);
        assert_eq!(lx.degree(), 1);
        // L(x^2) = -2x^2 + 1
        let lx2 = &img.images()[1];
        assert_eq!(lx2.eval(&[2.0]), -7.0);
        assert_eq!(lx2.eval(&[0.0]), 1.0);
    }

    #[test]
    fn generator_images_zero_sde() {
        let basis = build_basis(2, 2).unwrap();
        let sde = PolynomialSde::new(
            vec![Polynomial::zero(2), Polynomial::zero(2)],
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        let img = apply_generator(&sde, &basis).unwrap();
        assert!(img.images().iter().all(Polynomial::is_zero));
    }

    #[test]
    fn generator_rotation_field() {
        // f = (x2, -x1), a = 0: L(x1) = x2
        let basis = build_basis(2, 2).unwrap();
        let sde = PolynomialSde::new(
            vec![
                Polynomial::monomial(&[0, 1], 1.0),
                Polynomial::monomial(&[1, 0], -1.0),
            ],
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        let img = apply_generator(&sde, &basis).unwrap();
        let l_x1 = &img.images()[0];
        assert_eq!(l_x1.eval(&[3.0, 5.0]), 5.0);
    }

    #[test]
    fn stationary_ou_has_zero_rhs() {
        // N(0, 1/2) is the stationary law of dx = -x dt + dW
        let basis = build_basis(1, 2).unwrap();
        let theta = gaussian_to_natural(
            &basis,
            &DVector::zeros(1),
            &DMatrix::from_element(1, 1, 0.5),
        )
        .unwrap();
        let xi = crate::expfam::bijection_from_quadratic(&basis, &theta).unwrap();
        let stats = NodeStats::build(&basis, &grid(1, 7), &xi).unwrap();
        let rhs =
            predictive_rhs(&theta, &stats, &apply_generator(&ou_sde(), &basis).unwrap()).unwrap();
        // bounded by the quadrature resolution of the second moment
        assert!(rhs.norm() < 1e-4, "rhs = {rhs:?}");
    }

    #[test]
    fn ou_moment_rates_from_standard_normal() {
        // from N(0,1): dmu/dt = 0, dP/dt = -2P + 1 = -1; checked through
        // d eta/dt = g d theta/dt = E[L(c)]
        let basis = build_basis(1, 2).unwrap();
        let theta =
            gaussian_to_natural(&basis, &DVector::zeros(1), &DMatrix::identity(1, 1)).unwrap();
        let xi = BijectionParams::identity(1);
        let g = grid(1, 7);
        let stats = NodeStats::build(&basis, &g, &xi).unwrap();
        let gen = apply_generator(&ou_sde(), &basis).unwrap();
        let rhs = predictive_rhs(&theta, &stats, &gen).unwrap();
        let (_, fisher) = stats.moments_and_fisher(&theta).unwrap();
        let deta = &fisher.matrix * &rhs;
        assert!(deta[0].abs() < 1e-6);
        assert_relative_eq!(deta[1], -1.0, epsilon = 1e-3);
    }

    #[test]
    fn ou_propagation_matches_closed_form() {
        // from N(2,1) over unit time: mu(t) = 2 e^-t, P(t) = e^-2t + (1-e^-2t)/2
        let basis = build_basis(1, 2).unwrap();
        let theta = gaussian_to_natural(
            &basis,
            &DVector::from_element(1, 2.0),
            &DMatrix::identity(1, 1),
        )
        .unwrap();
        let xi = crate::expfam::bijection_from_quadratic(&basis, &theta).unwrap();
        let g = grid(1, 7);
        let (theta_t, xi_t) = propagate(
            &theta,
            &xi,
            &ou_sde(),
            &basis,
            &g,
            1.0,
            1000,
            PropagationSolver::Euler,
        )
        .unwrap();
        let e2 = libm::exp(-2.0);
        let mu_want = 2.0 * libm::exp(-1.0);
        let p_want = e2 + 0.5 * (1.0 - e2);
        // read the propagated mean/covariance off the refreshed bijection
        assert_relative_eq!(xi_t.mu[0], mu_want, epsilon = 1e-3);
        let p_got = xi_t.l[(0, 0)] * xi_t.l[(0, 0)];
        assert_relative_eq!(p_got, p_want, epsilon = 1e-3);
        // and off theta itself
        let sigma_inv = -2.0 * theta_t.0[1];
        assert_relative_eq!(1.0 / sigma_inv, p_want, epsilon = 1e-3);
        assert_relative_eq!(theta_t.0[0] / sigma_inv, mu_want, epsilon = 1e-3);
    }

    #[test]
    fn adaptive_propagation_agrees_with_euler() {
        let basis = build_basis(1, 2).unwrap();
        let theta = gaussian_to_natural(
            &basis,
            &DVector::from_element(1, 2.0),
            &DMatrix::identity(1, 1),
        )
        .unwrap();
        let xi = crate::expfam::bijection_from_quadratic(&basis, &theta).unwrap();
        let g = grid(1, 7);
        let (ta, _) = propagate(
            &theta,
            &xi,
            &ou_sde(),
            &basis,
            &g,
            1.0,
            100,
            PropagationSolver::AdaptiveRk,
        )
        .unwrap();
        let (te, _) = propagate(
            &theta,
            &xi,
            &ou_sde(),
            &basis,
            &g,
            1.0,
            1000,
            PropagationSolver::Euler,
        )
        .unwrap();
        assert!((ta.0 - te.0).norm() < 1e-2);
    }

    #[test]
    fn zero_horizon_and_zero_sde_are_identities() {
        let basis = build_basis(1, 2).unwrap();
        let theta =
            gaussian_to_natural(&basis, &DVector::zeros(1), &DMatrix::identity(1, 1)).unwrap();
        let xi = BijectionParams::identity(1);
        let g = grid(1, 6);
        let (t0, x0) = propagate(
            &theta,
            &xi,
            &ou_sde(),
            &basis,
            &g,
            0.0,
            100,
            PropagationSolver::Euler,
        )
        .unwrap();
        assert_eq!(t0.0, theta.0);
        assert_eq!(x0.mu, xi.mu);
        let zero = PolynomialSde::new(vec![Polynomial::zero(1)], DMatrix::zeros(1, 1)).unwrap();
        let (tz, _) = propagate(
            &theta,
            &xi,
            &zero,
            &basis,
            &g,
            5.0,
            100,
            PropagationSolver::Euler,
        )
        .unwrap();
        assert_eq!(tz.0, theta.0);
    }

    #[test]
    fn rejects_asymmetric_diffusion() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.0]);
        assert!(
            PolynomialSde::new(vec![Polynomial::zero(2), Polynomial::zero(2)], bad).is_err()
        );
    }
}
