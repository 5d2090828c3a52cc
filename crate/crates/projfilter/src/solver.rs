//! Embedded Dormand-Prince 5(4) integrator with a proportional step
//! controller, shared by the divergence-descent flow and the predictive
//! propagation. The right-hand side may mutate itself after each accepted
//! step (the node bijection is refreshed there), so first-same-as-last reuse
//! is deliberately not applied.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DVector;

use crate::{Error, Result};

/// An autonomous ODE whose vector field may carry mutable state.
pub(crate) trait OdeSystem {
    fn field(&mut self, y: &DVector<f64>) -> Result<DVector<f64>>;

    /// Called after every accepted step; may rebuild internal caches.
    fn accepted(&mut self, t: f64, y: &DVector<f64>) -> Result<()>;
}

const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [
    19372.0 / 6561.0,
    -25360.0 / 2187.0,
    64448.0 / 6561.0,
    -212.0 / 729.0,
];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
/// Fifth-order weights (also the last stage row).
const B5: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
/// Embedded fourth-order weights.
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrate from 0 to `t_end`, calling `sys.accepted` after each accepted
/// step, and return the final state.
pub(crate) fn integrate_adaptive(
    sys: &mut impl OdeSystem,
    y0: DVector<f64>,
    t_end: f64,
    abs_tol: f64,
    rel_tol: f64,
    h_init: f64,
    max_steps: usize,
) -> Result<DVector<f64>> {
    let mut y = y0;
    let mut t = 0.0;
    let mut h = h_init.min(t_end).max(1e-12);
    let mut evals = 0usize;
    let mut k = Vec::with_capacity(7);

    while t < t_end {
        if evals >= max_steps {
            return Err(Error::SolverFailure {
                context: format!("step budget exhausted at t = {t:.6}"),
            });
        }
        evals += 1;
        if t + h > t_end {
            h = t_end - t;
        }

        k.clear();
        // the base point is an accepted state, so a failure here is fatal
        k.push(sys.field(&y)?);
        let stage = |k: &[DVector<f64>], coeffs: &[f64], y: &DVector<f64>, h: f64| {
            let mut s = y.clone();
            for (ki, c) in k.iter().zip(coeffs) {
                s.axpy(h * c, ki, 1.0);
            }
            s
        };
        // a failing trial stage means the step left the valid parameter
        // region: reject it and shrink, like an oversized error estimate
        let trial = (|| -> Result<Option<DVector<f64>>> {
            for coeffs in [&A2[..], &A3[..], &A4[..], &A5[..], &A6[..]] {
                match sys.field(&stage(&k, coeffs, &y, h)) {
                    Ok(ki) => k.push(ki),
                    Err(_) => return Ok(None),
                }
            }
            let y5 = stage(&k, &B5, &y, h);
            match sys.field(&y5) {
                Ok(k7) => {
                    k.push(k7);
                    Ok(Some(y5))
                }
                Err(_) => Ok(None),
            }
        })()?;
        let y5 = match trial {
            Some(y5) => y5,
            None => {
                h *= 0.25;
                if h < 1e-14 * t_end.max(1.0) {
                    return Err(Error::SolverFailure {
                        context: String::from("step size underflow in a restricted region"),
                    });
                }
                continue;
            }
        };

        // scaled RMS error of the 5th-vs-4th order difference
        let mut err_sq = 0.0;
        let n = y.len();
        for i in 0..n {
            let mut e = 0.0;
            for (j, kj) in k.iter().enumerate() {
                let b5 = if j < 6 { B5[j] } else { 0.0 };
                e += (b5 - B4[j]) * kj[i];
            }
            e *= h;
            let scale = abs_tol + rel_tol * libm::fmax(libm::fabs(y[i]), libm::fabs(y5[i]));
            err_sq += (e / scale) * (e / scale);
        }
        let err = libm::sqrt(err_sq / n as f64);

        if err <= 1.0 {
            t += h;
            y = y5;
            sys.accepted(t, &y)?;
        }
        let factor = if err > 0.0 {
            0.9 * libm::pow(err, -0.2)
        } else {
            5.0
        };
        h *= libm::fmax(0.2, libm::fmin(5.0, factor));
        if h < 1e-14 * t_end.max(1.0) {
            return Err(Error::SolverFailure {
                context: String::from("step size underflow"),
            });
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay {
        accepted_times: Vec<f64>,
    }

    impl OdeSystem for Decay {
        fn field(&mut self, y: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(-y)
        }
        fn accepted(&mut self, t: f64, _y: &DVector<f64>) -> Result<()> {
            self.accepted_times.push(t);
            Ok(())
        }
    }

    #[test]
    fn exponential_decay_to_tolerance() {
        let mut sys = Decay {
            accepted_times: Vec::new(),
        };
        let y = integrate_adaptive(
            &mut sys,
            DVector::from_vec(alloc::vec![1.0, 2.0]),
            3.0,
            1e-10,
            1e-8,
            0.1,
            10_000,
        )
        .unwrap();
        let want = libm::exp(-3.0);
        assert!((y[0] - want).abs() < 1e-7);
        assert!((y[1] - 2.0 * want).abs() < 1e-7);
        assert!(!sys.accepted_times.is_empty());
        assert!((sys.accepted_times.last().unwrap() - 3.0).abs() < 1e-12);
    }

    struct Circle;

    impl OdeSystem for Circle {
        fn field(&mut self, y: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::from_vec(alloc::vec![-y[1], y[0]]))
        }
        fn accepted(&mut self, _t: f64, _y: &DVector<f64>) -> Result<()> {
            Ok(())
        }
    }

    #[test]
    fn rotation_preserves_radius() {
        let y = integrate_adaptive(
            &mut Circle,
            DVector::from_vec(alloc::vec![1.0, 0.0]),
            core::f64::consts::TAU,
            1e-10,
            1e-9,
            0.05,
            100_000,
        )
        .unwrap();
        assert!((y[0] - 1.0).abs() < 1e-6);
        assert!(y[1].abs() < 1e-6);
    }
}
