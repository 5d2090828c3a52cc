//! Scalar math routed through `libm` plus a handful of numerically careful
//! building blocks (inverse error function, signed log-sum-exp).
//!
//! Routing everything through `libm` keeps results bit-identical between the
//! `std` and `no_std` builds and across platforms.

use alloc::vec::Vec;

pub(crate) use libm::{atan, cos, erf, erfc, exp, fabs, log as ln, sin, sqrt};

pub(crate) const SQRT_PI: f64 = 1.7724538509055160273;

/// Inverse of the error function on (-1, 1).
///
/// Rational initial guess (Acklam's inverse normal quantile) refined with two
/// Newton steps computed through `erfc`, so the tail retains full relative
/// precision. Accurate to a few ulps over the range used by the quadrature
/// tables (|x| <= 1 - 1e-5 and well beyond).
pub(crate) fn erfinv(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    if x < 0.0 {
        return -erfinv(-x);
    }
    debug_assert!(x < 1.0);
    // erfinv(x) = -Phi^{-1}((1-x)/2) / sqrt(2)
    let mut y = -norminv(0.5 * (1.0 - x)) / core::f64::consts::SQRT_2;
    for _ in 0..2 {
        // f'(y) = 2/sqrt(pi) exp(-y^2); the residual is formed so that both
        // operands stay comparable in magnitude (erf near 0, erfc near 1)
        let f = if x < 0.5 {
            erf(y) - x
        } else {
            (1.0 - x) - erfc(y)
        };
        y -= f * (0.5 * SQRT_PI) * exp(y * y);
    }
    y
}

/// Acklam's rational approximation to the standard normal quantile,
/// |relative error| < 1.15e-9 on (0, 1). Only used to seed Newton.
fn norminv(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = sqrt(-2.0 * ln(p));
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -norminv(1.0 - p)
    }
}

/// Log of a signed sum of exponentials: `log(sum_i sign_i * exp(log_abs_i))`.
///
/// Returns `None` when no term is finite or the signed sum is nonpositive
/// (the log does not exist). Max-subtraction keeps the reduction safe for
/// exponents far outside the representable range.
pub(crate) fn signed_log_sum_exp(terms: &[(f64, f64)]) -> Option<f64> {
    let m = terms
        .iter()
        .map(|t| t.0)
        .fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return None;
    }
    let s: f64 = terms
        .iter()
        .map(|&(log_abs, sign)| sign * exp(log_abs - m))
        .sum();
    if s > 0.0 {
        Some(m + ln(s))
    } else {
        None
    }
}

/// Signed weights `sign_i * exp(log_abs_i - log_norm)`.
pub(crate) fn normalized_signed_weights(terms: &[(f64, f64)], log_norm: f64) -> Vec<f64> {
    terms
        .iter()
        .map(|&(log_abs, sign)| sign * exp(log_abs - log_norm))
        .collect()
}

/// Squared Euclidean norm of a slice.
pub(crate) fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}
