//! Adaptive Dormand-Prince 5(4) integration of scalar ODEs.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct OdeEnd {
    pub t: f64,
    pub x: f64,
    /// The observer asked to stop before `t_end`.
    pub stopped: bool,
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// Fifth-order weights equal the last row of A (FSAL); these are 5th minus 4th.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates `x' = f(t, x)` from `t0` to `t_end`. `observe(t, x)` is called
/// after every accepted step and may return `true` to stop early.
pub(crate) fn dopri5(
    f: impl Fn(f64, f64) -> f64,
    t0: f64,
    x0: f64,
    t_end: f64,
    rtol: f64,
    observe: &mut impl FnMut(f64, f64) -> bool,
) -> Result<OdeEnd> {
    let atol = rtol * 1e-2;
    let span = t_end - t0;
    let mut t = t0;
    let mut x = x0;
    let mut h = span * 1e-3;
    let mut k = [0.0; 7];
    k[0] = f(t, x);
    let mut steps = 0usize;
    while t < t_end {
        steps += 1;
        if steps > 10_000_000 {
            return Err(Error::NumericalFailure("ODE step budget exhausted".into()));
        }
        if t + h > t_end {
            h = t_end - t;
        }
        for s in 1..7 {
            let incr: f64 = (0..s).map(|j| A[s][j] * k[j]).sum();
            k[s] = f(t + C[s] * h, x + h * incr);
        }
        let x_new = x + h * (0..6).map(|j| A[6][j] * k[j]).sum::<f64>();
        let err_est = h * (0..7).map(|j| E[j] * k[j]).sum::<f64>();
        let scale = atol + rtol * x.abs().max(x_new.abs());
        let err = (err_est / scale).abs();
        if !x_new.is_finite() || !err.is_finite() {
            h *= 0.2;
        } else if err <= 1.0 {
            t += h;
            x = x_new;
            k[0] = k[6];
            if observe(t, x) {
                return Ok(OdeEnd { t, x, stopped: true });
            }
            h *= (0.9 * err.max(1e-10).powf(-0.2)).min(5.0);
        } else {
            h *= (0.9 * err.powf(-0.2)).max(0.2);
        }
        if h.abs() < 1e-14 * span.abs().max(t.abs()) {
            return Err(Error::NumericalFailure(format!("ODE step size underflow at t = {t}")));
        }
    }
    Ok(OdeEnd {
        t,
        x,
        stopped: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let end = dopri5(|_, x| -2.0 * x, 0.0, 1.0, 3.0, 1e-10, &mut |_, _| false).unwrap();
        assert!((end.x - (-6.0f64).exp()).abs() < 1e-9);
        assert!(!end.stopped);
    }

    #[test]
    fn riccati_blow_up_is_detected() {
        // x' = x^2, x(0) = 1 blows up at t = 1.
        let end = dopri5(|_, x| x * x, 0.0, 1.0, 2.0, 1e-8, &mut |_, x| x > 1e3).unwrap();
        assert!(end.stopped);
        assert!((end.t - 1.0).abs() < 2e-3);
    }
}
