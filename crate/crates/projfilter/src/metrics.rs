//! Dense density grids and distances between them.
//!
//! Ground-truth posteriors, family members, and particle histograms are all
//! reduced to values on a common axis-aligned cell grid (cell centers,
//! midpoint normalization), after which Hellinger and KL distances are plain
//! discrete sums. This replaces a high-level sparse-grid reference
//! integrator with something whose refinement behavior is directly testable.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::baselines::ParticleSet;
use crate::expfam::{NaturalParams, StatisticsBasis};
use crate::math;
use crate::posterior::LikelihoodModel;
use crate::{Error, Result};

/// Fraction of total mass allowed in the outermost cell ring before a
/// region is declared too small.
pub const BOUNDARY_MASS_LIMIT: f64 = 1e-5;
/// Cap, in nats, on the per-cell log-ratio when the reference grid has an
/// empty cell where the other grid has mass.
pub const KL_LOG_RATIO_CAP: f64 = 1e3;

/// An axis-aligned box `[lo_j, hi_j]` per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Region {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::invalid("region bounds arity mismatch"));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(Error::invalid("region must have positive extent"));
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Box centered at `mu` extending `k` marginal standard deviations of
    /// `sigma` on each side.
    pub fn centered_at(mu: &DVector<f64>, sigma: &DMatrix<f64>, k: f64) -> Result<Self> {
        let d = mu.len();
        let mut lo = Vec::with_capacity(d);
        let mut hi = Vec::with_capacity(d);
        for j in 0..d {
            let s = math::sqrt(sigma[(j, j)]);
            lo.push(mu[j] - k * s);
            hi.push(mu[j] + k * s);
        }
        Region::new(lo, hi)
    }

    /// Double the half-width about the center on every axis.
    pub fn doubled(&self) -> Self {
        let mut lo = self.lo.clone();
        let mut hi = self.hi.clone();
        for j in 0..self.dim() {
            let c = 0.5 * (self.lo[j] + self.hi[j]);
            let half = self.hi[j] - c;
            lo[j] = c - 2.0 * half;
            hi[j] = c + 2.0 * half;
        }
        Self { lo, hi }
    }
}

/// Density values at the centers of a `resolution^d` cell grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub region: Region,
    pub resolution: usize,
    /// Row-major over axes (last axis fastest).
    pub values: Vec<f64>,
    pub cell_measure: f64,
}

impl DensityGrid {
    pub fn dim(&self) -> usize {
        self.region.dim()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total mass `sum(values) * cell_measure`.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_measure
    }

    fn axis_step(&self, j: usize) -> f64 {
        (self.region.hi[j] - self.region.lo[j]) / self.resolution as f64
    }

    /// Center coordinate of cell index `i` along axis `j`.
    pub fn axis_center(&self, j: usize, i: usize) -> f64 {
        self.region.lo[j] + (i as f64 + 0.5) * self.axis_step(j)
    }

    /// Mass fraction in the outermost ring of cells.
    pub fn boundary_mass_fraction(&self) -> f64 {
        let res = self.resolution;
        let total: f64 = self.values.iter().sum();
        if total <= 0.0 {
            return 1.0;
        }
        let mut ring = 0.0;
        match self.dim() {
            1 => {
                ring += self.values[0] + self.values[res - 1];
            }
            _ => {
                for i in 0..res {
                    for j in 0..res {
                        if i == 0 || j == 0 || i == res - 1 || j == res - 1 {
                            ring += self.values[i * res + j];
                        }
                    }
                }
            }
        }
        ring / total
    }
}

fn grid_geometry(region: &Region, resolution: usize) -> Result<(usize, f64)> {
    let d = region.dim();
    if d > 2 {
        return Err(Error::invalid("density grids support one or two axes"));
    }
    if resolution < 2 {
        return Err(Error::invalid("resolution must be at least 2"));
    }
    let mut cell = 1.0;
    for j in 0..d {
        cell *= (region.hi[j] - region.lo[j]) / resolution as f64;
    }
    Ok((d, cell))
}

/// Per-axis tables of coordinate powers `x^p` for fast monomial evaluation
/// across a whole grid.
fn axis_power_tables(
    region: &Region,
    resolution: usize,
    max_order: u32,
) -> Vec<Vec<f64>> {
    let d = region.dim();
    let stride = max_order as usize + 1;
    let mut tables = Vec::with_capacity(d);
    for j in 0..d {
        let step = (region.hi[j] - region.lo[j]) / resolution as f64;
        let mut table = vec![1.0; resolution * stride];
        for i in 0..resolution {
            let x = region.lo[j] + (i as f64 + 0.5) * step;
            let mut acc = 1.0;
            for p in 1..stride {
                acc *= x;
                table[i * stride + p] = acc;
            }
        }
        tables.push(table);
    }
    tables
}

/// Evaluate `c(x)' theta` over all grid cells (row-major, last axis fastest).
fn log_family_values(
    basis: &StatisticsBasis,
    theta: &NaturalParams,
    region: &Region,
    resolution: usize,
) -> Vec<f64> {
    let d = region.dim();
    let stride = basis.max_order() as usize + 1;
    let tables = axis_power_tables(region, resolution, basis.max_order());
    let n = resolution.pow(d as u32);
    let mut out = vec![0.0; n];
    for (flat, slot) in out.iter_mut().enumerate() {
        let (i0, i1) = if d == 1 {
            (flat, 0)
        } else {
            (flat / resolution, flat % resolution)
        };
        let mut v = 0.0;
        for (k, idx) in basis.indices().iter().enumerate() {
            let mut mono = tables[0][i0 * stride + idx[0] as usize];
            if d == 2 {
                mono *= tables[1][i1 * stride + idx[1] as usize];
            }
            v += theta.0[k] * mono;
        }
        *slot = v;
    }
    out
}

fn normalize_log_values(mut log_values: Vec<f64>, region: Region, resolution: usize) -> Result<DensityGrid> {
    let (_, cell) = grid_geometry(&region, resolution)?;
    let max = log_values
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateDensity {
            context: String::from("no finite density value on the grid"),
        });
    }
    for v in log_values.iter_mut() {
        *v = math::exp(*v - max);
    }
    let total: f64 = log_values.iter().sum::<f64>() * cell;
    if total <= 0.0 {
        return Err(Error::DegenerateDensity {
            context: String::from("grid mass is zero"),
        });
    }
    for v in log_values.iter_mut() {
        *v /= total;
    }
    Ok(DensityGrid {
        region,
        resolution,
        values: log_values,
        cell_measure: cell,
    })
}

/// Evaluate the unnormalized Bayes posterior
/// `exp(c(x)' theta_prior - ell(x, y))` on the grid and normalize it.
///
/// Cells where `ell` is not finite (singular measurement points) carry zero
/// density. Fails with a region-too-small error when more than
/// [`BOUNDARY_MASS_LIMIT`] of the mass sits in the outermost cell ring.
pub fn ground_truth_grid(
    basis: &StatisticsBasis,
    theta_prior: &NaturalParams,
    model: &LikelihoodModel,
    y: &[f64],
    region: &Region,
    resolution: usize,
) -> Result<DensityGrid> {
    let d = region.dim();
    if d != basis.dim() {
        return Err(Error::invalid("region and basis dimension mismatch"));
    }
    let mut log_values = log_family_values(basis, theta_prior, region, resolution);
    let mut x = vec![0.0; d];
    for (flat, v) in log_values.iter_mut().enumerate() {
        let (i0, i1) = if d == 1 {
            (flat, 0)
        } else {
            (flat / resolution, flat % resolution)
        };
        x[0] = region.lo[0] + (i0 as f64 + 0.5) * (region.hi[0] - region.lo[0]) / resolution as f64;
        if d == 2 {
            x[1] =
                region.lo[1] + (i1 as f64 + 0.5) * (region.hi[1] - region.lo[1]) / resolution as f64;
        }
        let ell = model.eval(&x, y);
        *v = if ell.is_finite() {
            *v - ell
        } else {
            f64::NEG_INFINITY
        };
    }
    let grid = normalize_log_values(log_values, region.clone(), resolution)?;
    let boundary = grid.boundary_mass_fraction();
    if boundary > BOUNDARY_MASS_LIMIT {
        return Err(Error::RegionTooSmall {
            boundary_mass: boundary,
        });
    }
    Ok(grid)
}

/// Ground-truth grid over an automatically sized region: start at `k_sigma`
/// prior standard deviations and double the half-widths (at most three
/// times) until the boundary-mass check passes.
pub fn ground_truth_grid_auto(
    basis: &StatisticsBasis,
    theta_prior: &NaturalParams,
    model: &LikelihoodModel,
    y: &[f64],
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    k_sigma: f64,
    resolution: usize,
) -> Result<(DensityGrid, Region)> {
    let mut region = Region::centered_at(mu, sigma, k_sigma)?;
    for _ in 0..=3 {
        match ground_truth_grid(basis, theta_prior, model, y, &region, resolution) {
            Ok(grid) => return Ok((grid, region)),
            Err(Error::RegionTooSmall { .. }) => region = region.doubled(),
            Err(e) => return Err(e),
        }
    }
    ground_truth_grid(basis, theta_prior, model, y, &region, resolution)
        .map(|grid| (grid, region))
}

/// Evaluate a family member `exp(c(x)' theta)` on the grid and normalize.
pub fn density_to_grid(
    basis: &StatisticsBasis,
    theta: &NaturalParams,
    region: &Region,
    resolution: usize,
) -> Result<DensityGrid> {
    if region.dim() != basis.dim() {
        return Err(Error::invalid("region and basis dimension mismatch"));
    }
    let log_values = log_family_values(basis, theta, region, resolution);
    normalize_log_values(log_values, region.clone(), resolution)
}

/// Bin particles into the grid: `count / (n * cell_measure)`. Particles
/// outside the region are tallied, not binned, so the grid mass is the
/// in-region fraction.
pub fn histogram_to_grid(
    particles: &ParticleSet,
    region: &Region,
    resolution: usize,
) -> Result<(DensityGrid, usize)> {
    let (d, cell) = grid_geometry(region, resolution)?;
    if d != particles.dim {
        return Err(Error::invalid("region and particle dimension mismatch"));
    }
    let mut values = vec![0.0; resolution.pow(d as u32)];
    let mut overflow = 0usize;
    let n = particles.len();
    'outer: for i in 0..n {
        let x = particles.point(i);
        let mut flat = 0usize;
        for j in 0..d {
            let step = (region.hi[j] - region.lo[j]) / resolution as f64;
            let rel = (x[j] - region.lo[j]) / step;
            if rel < 0.0 || rel >= resolution as f64 {
                overflow += 1;
                continue 'outer;
            }
            flat = flat * resolution + rel as usize;
        }
        values[flat] += 1.0;
    }
    let scale = 1.0 / (n as f64 * cell);
    for v in values.iter_mut() {
        *v *= scale;
    }
    Ok((
        DensityGrid {
            region: region.clone(),
            resolution,
            values,
            cell_measure: cell,
        },
        overflow,
    ))
}

fn check_compatible(a: &DensityGrid, b: &DensityGrid) -> Result<()> {
    if a.region != b.region || a.resolution != b.resolution {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

/// Discrete Hellinger distance
/// `H = sqrt( (1/2) sum_i (sqrt(a_i) - sqrt(b_i))^2 * cell )`, in [0, 1].
pub fn hellinger(a: &DensityGrid, b: &DensityGrid) -> Result<f64> {
    check_compatible(a, b)?;
    let mut acc = 0.0;
    for (va, vb) in a.values.iter().zip(&b.values) {
        let d = math::sqrt(*va) - math::sqrt(*vb);
        acc += d * d;
    }
    let h2 = 0.5 * acc * a.cell_measure;
    Ok(math::sqrt(libm::fmin(libm::fmax(h2, 0.0), 1.0)))
}

/// KL divergence with flagged, capped handling of empty reference cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlResult {
    pub value: f64,
    /// Cells where `b = 0 < a`, each contributing the capped penalty.
    pub capped_cells: usize,
}

/// `KL(a || b) = sum_i a_i log(a_i / b_i) * cell` with `0 log 0 = 0`; cells
/// with `b_i = 0 < a_i` contribute `a_i * cell * KL_LOG_RATIO_CAP` nats and
/// are counted in the flag.
pub fn kl(a: &DensityGrid, b: &DensityGrid) -> Result<KlResult> {
    check_compatible(a, b)?;
    let mut acc = 0.0;
    let mut capped = 0usize;
    for (va, vb) in a.values.iter().zip(&b.values) {
        if *va <= 0.0 {
            continue;
        }
        if *vb <= 0.0 {
            capped += 1;
            acc += va * KL_LOG_RATIO_CAP;
        } else {
            acc += va * math::ln(va / vb);
        }
    }
    Ok(KlResult {
        value: acc * a.cell_measure,
        capped_cells: capped,
    })
}

/// Count strict local maxima (8-neighborhood for 2-D grids) whose value
/// exceeds `threshold_fraction` of the global peak.
pub fn local_maxima_count(grid: &DensityGrid, threshold_fraction: f64) -> usize {
    let peak = grid.values.iter().copied().fold(0.0f64, f64::max);
    let threshold = threshold_fraction * peak;
    let res = grid.resolution;
    let mut count = 0;
    match grid.dim() {
        1 => {
            // ties break toward the earlier cell so a flat two-cell peak
            // counts once
            for i in 1..res - 1 {
                let v = grid.values[i];
                if v > threshold && grid.values[i - 1] < v && grid.values[i + 1] <= v {
                    count += 1;
                }
            }
        }
        _ => {
            for i in 1..res - 1 {
                for j in 1..res - 1 {
                    let v = grid.values[i * res + j];
                    if v <= threshold {
                        continue;
                    }
                    let flat = i * res + j;
                    let mut is_max = true;
                    for di in -1i64..=1 {
                        for dj in -1i64..=1 {
                            if di == 0 && dj == 0 {
                                continue;
                            }
                            let nf = (i as i64 + di) as usize * res + (j as i64 + dj) as usize;
                            let nv = grid.values[nf];
                            // strict except against equal-valued later cells
                            if nv > v || (nv == v && nf < flat) {
                                is_max = false;
                            }
                        }
                    }
                    if is_max {
                        count += 1;
                    }
                }
            }
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{particle_update, GaussianBelief};
    use crate::expfam::{build_basis, gaussian_to_natural};
    use approx::assert_relative_eq;

    fn gaussian_grid_1d(mu: f64, var: f64, region: &Region, res: usize) -> DensityGrid {
        let basis = build_basis(1, 2).unwrap();
        let theta = gaussian_to_natural(
            &basis,
            &DVector::from_element(1, mu),
            &DMatrix::from_element(1, 1, var),
        )
        .unwrap();
        density_to_grid(&basis, &theta, region, res).unwrap()
    }

    #[test]
    fn grids_normalize_to_unit_mass() {
        let region = Region::new(vec![-8.0], vec![9.0]).unwrap();
        let g = gaussian_grid_1d(0.0, 1.0, &region, 1500);
        assert_relative_eq!(g.mass(), 1.0, epsilon = 1e-12);
        // matches the analytic density pointwise away from the tails
        let mid = g.values[750];
        let x = g.axis_center(0, 750);
        let want = math::exp(-0.5 * x * x) / math::sqrt(2.0 * core::f64::consts::PI);
        assert_relative_eq!(mid, want, max_relative = 1e-5);
    }

    #[test]
    fn hellinger_identities() {
        let region = Region::new(vec![-8.0], vec![9.0]).unwrap();
        let a = gaussian_grid_1d(0.0, 1.0, &region, 2000);
        let b = gaussian_grid_1d(1.0, 1.0, &region, 2000);
        assert_eq!(hellinger(&a, &a).unwrap(), 0.0);
        let h = hellinger(&a, &b).unwrap();
        // analytic: sqrt(1 - exp(-1/8))
        let want = math::sqrt(1.0 - math::exp(-0.125));
        assert_relative_eq!(h, want, epsilon = 1e-4);
        // symmetry is exact
        assert_eq!(h, hellinger(&b, &a).unwrap());
        // and consistent with the half-divergence relation
        let d_half = 0.25;
        assert_relative_eq!(h * h, 1.0 - math::exp(-0.5 * d_half), epsilon = 1e-4);
    }

    #[test]
    fn kl_properties() {
        let region = Region::new(vec![-9.0], vec![9.5]).unwrap();
        let a = gaussian_grid_1d(0.0, 1.0, &region, 2500);
        let b = gaussian_grid_1d(1.0, 1.0, &region, 2500);
        let same = kl(&a, &a).unwrap();
        assert!(same.value.abs() < 1e-12);
        assert_eq!(same.capped_cells, 0);
        let r = kl(&a, &b).unwrap();
        assert_relative_eq!(r.value, 0.5, epsilon = 1e-3);
        assert!(r.value >= -1e-10);
    }

    #[test]
    fn kl_caps_empty_reference_cells() {
        let region = Region::new(vec![0.0], vec![1.0]).unwrap();
        let a = DensityGrid {
            region: region.clone(),
            resolution: 2,
            values: vec![1.0, 1.0],
            cell_measure: 0.5,
        };
        let b = DensityGrid {
            region,
            resolution: 2,
            values: vec![2.0, 0.0],
            cell_measure: 0.5,
        };
        let r = kl(&a, &b).unwrap();
        assert_eq!(r.capped_cells, 1);
        assert!(r.value > 100.0);
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let r1 = Region::new(vec![0.0], vec![1.0]).unwrap();
        let r2 = Region::new(vec![0.0], vec![2.0]).unwrap();
        let a = gaussian_grid_1d(0.5, 0.01, &r1, 100);
        let b = gaussian_grid_1d(0.5, 0.01, &r2, 100);
        assert!(matches!(hellinger(&a, &b), Err(Error::GridMismatch)));
    }

    #[test]
    fn region_too_small_is_detected() {
        let basis = build_basis(1, 2).unwrap();
        let theta = gaussian_to_natural(
            &basis,
            &DVector::zeros(1),
            &DMatrix::identity(1, 1),
        )
        .unwrap();
        let region = Region::new(vec![-1.0], vec![1.0]).unwrap();
        let model = LikelihoodModel::custom(alloc::boxed::Box::new(|_, _| 0.0));
        assert!(matches!(
            ground_truth_grid(&basis, &theta, &model, &[], &region, 100),
            Err(Error::RegionTooSmall { .. })
        ));
        // the auto-sizing variant recovers by expanding
        let (grid, region) = ground_truth_grid_auto(
            &basis,
            &theta,
            &model,
            &[],
            &DVector::zeros(1),
            &DMatrix::identity(1, 1),
            1.0,
            400,
        )
        .unwrap();
        assert!(region.hi[0] >= 4.0);
        assert_relative_eq!(grid.mass(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn histogram_delta_and_overflow() {
        let region = Region::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let set = ParticleSet {
            dim: 2,
            points: vec![0.55, 0.55, 0.55, 0.55, 0.55, 0.55],
            weights: vec![1.0 / 3.0; 3],
            seed: 0,
        };
        let (grid, overflow) = histogram_to_grid(&set, &region, 10).unwrap();
        assert_eq!(overflow, 0);
        // all particles in one cell: value = 1 / cell_measure
        let peak = grid.values.iter().copied().fold(0.0f64, f64::max);
        assert_relative_eq!(peak, 1.0 / grid.cell_measure, epsilon = 1e-12);
        assert_relative_eq!(grid.mass(), 1.0, epsilon = 1e-12);

        let far = ParticleSet {
            dim: 2,
            points: vec![5.0, 5.0],
            weights: vec![1.0],
            seed: 0,
        };
        let (empty, overflow) = histogram_to_grid(&far, &region, 10).unwrap();
        assert_eq!(overflow, 1);
        assert_eq!(empty.mass(), 0.0);
    }

    #[test]
    fn histogram_of_gaussian_samples_approaches_the_density() {
        // 1e6 standard-normal samples on a grid coarse enough that binning
        // noise, ~sqrt(occupied cells / 8N), stays under 2e-2
        let belief = GaussianBelief::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let model = LikelihoodModel::custom(alloc::boxed::Box::new(|_, _| 0.0));
        let set = particle_update(&belief, &model, &[], 1_000_000, 2024).unwrap();
        let region = Region::new(vec![-6.0, -6.0], vec![6.0, 6.0]).unwrap();
        let res = 64;
        let (hist, overflow) = histogram_to_grid(&set, &region, res).unwrap();
        assert!(overflow < 5);
        let basis = build_basis(2, 2).unwrap();
        let theta =
            gaussian_to_natural(&basis, &DVector::zeros(2), &DMatrix::identity(2, 2)).unwrap();
        let dens = density_to_grid(&basis, &theta, &region, res).unwrap();
        let h = hellinger(&hist, &dens).unwrap();
        assert!(h <= 2e-2, "H = {h}");
    }

    #[test]
    fn multimodal_counting() {
        let region = Region::new(vec![-4.0], vec![4.0]).unwrap();
        let basis = build_basis(1, 2).unwrap();
        let theta = gaussian_to_natural(
            &basis,
            &DVector::zeros(1),
            &DMatrix::identity(1, 1),
        )
        .unwrap();
        let g = density_to_grid(&basis, &theta, &region, 200).unwrap();
        assert_eq!(local_maxima_count(&g, 0.1), 1);
    }
}
