//! Adaptive Dormand-Prince 5(4) integrator for small real systems.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { rtol: 1e-8, atol: 1e-10 }
    }
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
// fifth-order weights are the last row of A; these are fifth minus fourth
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrate `dy/dt = f(t, y)` from `t0` to `t1`, returning `y(t1)`.
///
/// `h0` is the first trial step; later steps adapt to the tolerance.
pub fn integrate<const N: usize>(
    f: impl Fn(f64, &[f64; N]) -> [f64; N],
    t0: f64,
    t1: f64,
    y0: [f64; N],
    h0: f64,
    tol: Tolerance,
) -> Result<[f64; N]> {
    let mut t = t0;
    let mut y = y0;
    let mut h = h0.min(t1 - t0);
    let h_min = 1e-14 * (t1 - t0).abs().max(f64::MIN_POSITIVE);
    let mut k = [[0.0; N]; 7];
    k[0] = f(t, &y);
    while t < t1 {
        if t + h > t1 {
            h = t1 - t;
        }
        let mut stage = [0.0; N];
        for s in 1..7 {
            for i in 0..N {
                let mut acc = 0.0;
                for j in 0..s {
                    acc += A[s][j] * k[j][i];
                }
                stage[i] = y[i] + h * acc;
            }
            k[s] = f(t + C[s] * h, &stage);
        }
        // stage holds the fifth-order solution after the last pass
        let mut err = 0.0f64;
        for i in 0..N {
            let mut e = 0.0;
            for s in 0..7 {
                e += E[s] * k[s][i];
            }
            let scale = tol.atol + tol.rtol * y[i].abs().max(stage[i].abs());
            err = err.max((h * e / scale).abs());
        }
        if !err.is_finite() {
            return Err(Error::StepSizeFailure { t, achieved: err });
        }
        if err <= 1.0 {
            t += h;
            y = stage;
            k[0] = k[6];
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
        if h < h_min && t < t1 {
            return Err(Error::StepSizeFailure { t, achieved: err });
        }
    }
    Ok(y)
}
