//! Nested Gauss-Patterson sparse grids and integration over `R^d`.
//!
//! One-dimensional rules come from embedded tables (levels 1..=7, i.e.
//! 1 to 127 nodes); multi-dimensional grids use the Smolyak combination of
//! the nested rules on `(-1,1)^d`. [`transform_to_unbounded`] then maps each
//! node through the inverse error function and rescales the weights so the
//! grid integrates functions over all of `R^d`:
//!
//! ```text
//! integral over R^d of phi  ~=  sum_i w_i * (sqrt(pi)/2)^d * exp(|y_i|^2) * phi(y_i)
//! ```
//!
//! The change-of-variables constant is the analytic Jacobian of
//! `x = erf(y)`, i.e. `(sqrt(pi)/2)^d`; it is validated by the Gaussian
//! integral `integrate(exp(-|y|^2)) = pi^(d/2)`, which the transformed grid
//! reproduces to machine precision by construction.

mod tables;

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

/// Highest tabulated one-dimensional level (127 nodes).
pub const MAX_LEVEL_1D: u32 = 7;

/// A one-dimensional quadrature rule on (-1, 1).
///
/// Levels follow the nested Gauss-Patterson sequence: level `k` has
/// `2^k - 1` nodes and integrates polynomials exactly up to degree
/// `3 * 2^(k-1) - 1` for `k >= 2` (degree 1 for the midpoint rule).
#[derive(Debug, Clone, PartialEq)]
pub struct Rule1D {
    pub level: u32,
    /// Strictly increasing nodes in (-1, 1).
    pub nodes: Vec<f64>,
    /// Weights, same length as `nodes`; they sum to 2.
    pub weights: Vec<f64>,
}

impl Rule1D {
    /// Polynomial degree integrated exactly by this rule.
    pub fn exactness_degree(&self) -> u32 {
        if self.level == 1 {
            1
        } else {
            3 * (1 << (self.level - 1)) - 1
        }
    }
}

fn level_data(level: u32) -> Option<(f64, &'static [f64], &'static [f64])> {
    use tables::*;
    Some(match level {
        1 => (CENTER_WEIGHT_L1, &POSITIVE_NODES_L1[..], &POSITIVE_WEIGHTS_L1[..]),
        2 => (CENTER_WEIGHT_L2, &POSITIVE_NODES_L2[..], &POSITIVE_WEIGHTS_L2[..]),
        3 => (CENTER_WEIGHT_L3, &POSITIVE_NODES_L3[..], &POSITIVE_WEIGHTS_L3[..]),
        4 => (CENTER_WEIGHT_L4, &POSITIVE_NODES_L4[..], &POSITIVE_WEIGHTS_L4[..]),
        5 => (CENTER_WEIGHT_L5, &POSITIVE_NODES_L5[..], &POSITIVE_WEIGHTS_L5[..]),
        6 => (CENTER_WEIGHT_L6, &POSITIVE_NODES_L6[..], &POSITIVE_WEIGHTS_L6[..]),
        7 => (CENTER_WEIGHT_L7, &POSITIVE_NODES_L7[..], &POSITIVE_WEIGHTS_L7[..]),
        _ => return None,
    })
}

/// The nested Gauss-Patterson rule with `2^level - 1` points, `level` in 1..=7.
pub fn gauss_patterson_1d(level: u32) -> Result<Rule1D> {
    let (wc, pos, wpos) =
        level_data(level).ok_or(Error::UnsupportedLevel { level, dim: 1 })?;
    let n = 2 * pos.len() + 1;
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    // mirror the stored positive half so the rule is bitwise symmetric
    for (x, w) in pos.iter().zip(wpos).rev() {
        nodes.push(-x);
        weights.push(*w);
    }
    nodes.push(0.0);
    weights.push(wc);
    for (x, w) in pos.iter().zip(wpos) {
        nodes.push(*x);
        weights.push(*w);
    }
    Ok(Rule1D {
        level,
        nodes,
        weights,
    })
}

/// A sparse quadrature grid in `dim` dimensions.
///
/// Untransformed grids live on `(-1,1)^d`; [`transform_to_unbounded`] turns
/// them into grids over `R^d`. Combination weights may be negative. Nodes are
/// stored flat (`len * dim`) in lexicographic coordinate order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGrid {
    dim: usize,
    level: u32,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    transformed: bool,
}

impl SparseGrid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// Number of distinct nodes.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Coordinates of node `i`.
    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Whether the grid has been mapped to `R^d`.
    pub fn is_transformed(&self) -> bool {
        self.transformed
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.nodes
            .chunks_exact(self.dim)
            .zip(self.weights.iter().copied())
    }
}

/// Monotone bijection from f64 to u64 preserving the value order; used to
/// merge and sort nodes without tolerance ambiguity (shared nodes of nested
/// tensor rules are bit-identical because every level reads the same table).
fn order_key(x: f64) -> u64 {
    let b = x.to_bits();
    if b >> 63 == 0 {
        b | (1 << 63)
    } else {
        !b
    }
}

/// Standard Smolyak combination of the nested 1D rules on `(-1,1)^dim`.
///
/// For `dim == 1` this is exactly [`gauss_patterson_1d`] (levels 1..=7). For
/// `dim >= 2`, level `L` keeps the tensor products whose 1D levels satisfy
/// `sum_j (i_j - 1) <= L`, so single-axis refinement reaches 1D level `L + 1`
/// and the supported range is 1..=6. At `dim = 2, level = 6` the grid has
/// 769 distinct nodes. Duplicate nodes arising from overlapping tensor rules
/// are merged with summed weights.
pub fn smolyak_grid(dim: usize, level: u32) -> Result<SparseGrid> {
    if dim == 0 {
        return Err(Error::invalid("sparse grid dimension must be >= 1"));
    }
    if dim == 1 {
        let rule = gauss_patterson_1d(level)?;
        return Ok(SparseGrid {
            dim: 1,
            level,
            nodes: rule.nodes,
            weights: rule.weights,
            transformed: false,
        });
    }
    if level < 1 || level + 1 > MAX_LEVEL_1D {
        return Err(Error::UnsupportedLevel { level, dim });
    }

    let rules: Vec<Rule1D> = (1..=level + 1)
        .map(gauss_patterson_1d)
        .collect::<Result<_>>()?;

    // combination coefficients: q - d + 1 <= |i| <= q with q = level + d
    let q = level as usize + dim;
    let mut merged: alloc::collections::BTreeMap<Vec<u64>, (Vec<f64>, f64)> =
        alloc::collections::BTreeMap::new();

    let mut index = vec![1usize; dim];
    loop {
        let total: usize = index.iter().sum();
        if total >= q - dim + 1 && total <= q {
            let excess = q - total;
            let coeff = if excess % 2 == 0 { 1.0 } else { -1.0 }
                * binomial(dim - 1, excess) as f64;
            accumulate_tensor(&rules, &index, coeff, dim, &mut merged);
        }
        // odometer over 1D levels 1..=level+1
        let mut axis = 0;
        loop {
            index[axis] += 1;
            if index[axis] <= (level + 1) as usize {
                break;
            }
            index[axis] = 1;
            axis += 1;
            if axis == dim {
                let (nodes, weights) = flatten(merged, dim);
                return Ok(SparseGrid {
                    dim,
                    level,
                    nodes,
                    weights,
                    transformed: false,
                });
            }
        }
    }
}

fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let mut r: u64 = 1;
    for i in 0..k.min(n - k) {
        r = r * (n - i) as u64 / (i + 1) as u64;
    }
    r
}

fn accumulate_tensor(
    rules: &[Rule1D],
    index: &[usize],
    coeff: f64,
    dim: usize,
    merged: &mut alloc::collections::BTreeMap<Vec<u64>, (Vec<f64>, f64)>,
) {
    let mut pos = vec![0usize; dim];
    loop {
        let mut key = Vec::with_capacity(dim);
        let mut coords = Vec::with_capacity(dim);
        let mut w = coeff;
        for axis in 0..dim {
            let rule = &rules[index[axis] - 1];
            let x = rule.nodes[pos[axis]];
            key.push(order_key(x));
            coords.push(x);
            w *= rule.weights[pos[axis]];
        }
        merged
            .entry(key)
            .and_modify(|e| e.1 += w)
            .or_insert((coords, w));
        let mut axis = 0;
        loop {
            pos[axis] += 1;
            if pos[axis] < rules[index[axis] - 1].nodes.len() {
                break;
            }
            pos[axis] = 0;
            axis += 1;
            if axis == dim {
                return;
            }
        }
    }
}

fn flatten(
    merged: alloc::collections::BTreeMap<Vec<u64>, (Vec<f64>, f64)>,
    dim: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(merged.len() * dim);
    let mut weights = Vec::with_capacity(merged.len());
    for (_, (coords, w)) in merged {
        nodes.extend_from_slice(&coords);
        weights.push(w);
    }
    (nodes, weights)
}

/// Map a grid on `(-1,1)^d` to `R^d` via `y = erfinv(x)` componentwise,
/// folding the change-of-variables factor `(sqrt(pi)/2)^d exp(|y|^2)` into
/// the weights.
pub fn transform_to_unbounded(grid: &SparseGrid) -> Result<SparseGrid> {
    if grid.transformed {
        return Err(Error::invalid("grid is already transformed"));
    }
    let constant = {
        let k = 0.5 * math::SQRT_PI;
        let mut c = 1.0;
        for _ in 0..grid.dim {
            c *= k;
        }
        c
    };
    let mut nodes = Vec::with_capacity(grid.nodes.len());
    let mut weights = Vec::with_capacity(grid.weights.len());
    for (i, (x, w)) in grid.iter().enumerate() {
        let mut y = Vec::with_capacity(grid.dim);
        for &c in x {
            if math::fabs(c) >= 1.0 - 1e-15 {
                return Err(Error::TransformOverflow { index: i, value: c });
            }
            y.push(math::erfinv(c));
        }
        let r2 = math::norm_sq(&y);
        weights.push(constant * math::exp(r2) * w);
        nodes.extend_from_slice(&y);
    }
    Ok(SparseGrid {
        dim: grid.dim,
        level: grid.level,
        nodes,
        weights,
        transformed: true,
    })
}

/// Quadrature sum `sum_i w_i phi(y_i)` over a transformed grid.
///
/// `phi` must be finite at every node and side-effect free.
pub fn integrate<F: Fn(&[f64]) -> f64>(grid: &SparseGrid, phi: F) -> Result<f64> {
    debug_assert!(grid.transformed, "integrate expects a transformed grid");
    let mut acc = 0.0;
    for (i, (y, w)) in grid.iter().enumerate() {
        let v = phi(y);
        if !v.is_finite() {
            return Err(Error::NonFiniteIntegrand { index: i });
        }
        acc += w * v;
    }
    Ok(acc)
}
