//! Adaptive Dormand-Prince 5(4) integrator with max-norm error control.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { rtol: 1e-8, atol: 1e-12, max_steps: 5_000_000 }
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
// Difference between the 5th and embedded 4th order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrate `y' = f(t, y)` from `t0` and return the state at each of
/// `times` (increasing, all `>= t0`). Steps are clipped so every output time
/// is hit exactly.
pub fn integrate<F>(mut f: F, t0: f64, y0: &[f64], times: &[f64], opts: &OdeOptions) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|&t| t < t0) {
        return Err(Error::domain("output times must be increasing and not before t0"));
    }
    let mut out = Vec::with_capacity(times.len());
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    f(t, &y, &mut k[0]);

    let scale = |y: &[f64], i: usize| opts.atol + opts.rtol * y[i].abs();
    let d0 = (0..n).map(|i| (y[i] / scale(&y, i)).abs()).fold(0.0, f64::max);
    let d1 = (0..n).map(|i| (k[0][i] / scale(&y, i)).abs()).fold(0.0, f64::max);
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let mut steps = 0usize;

    for &target in times {
        while t < target {
            if steps >= opts.max_steps {
                return Err(Error::Numerical(format!("step limit {} reached at t={t}", opts.max_steps)));
            }
            let last = h >= target - t;
            let hs = if last { target - t } else { h };
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = y[i];
                    for (j, kj) in k.iter().take(s).enumerate() {
                        acc += hs * A[s][j] * kj[i];
                    }
                    tmp[i] = acc;
                }
                let (done, rest) = k.split_at_mut(s);
                let _ = done;
                f(t + C[s] * hs, &tmp, &mut rest[0]);
                if s == 6 {
                    ynew.copy_from_slice(&tmp);
                }
            }
            let mut err = 0.0f64;
            for i in 0..n {
                let mut e = 0.0;
                for (s, ks) in k.iter().enumerate() {
                    e += E[s] * ks[i];
                }
                let sc = opts.atol + opts.rtol * y[i].abs().max(ynew[i].abs());
                err = err.max((hs * e).abs() / sc);
            }
            steps += 1;
            if !err.is_finite() {
                h = hs * 0.1;
            } else if err <= 1.0 {
                t = if last { target } else { t + hs };
                std::mem::swap(&mut y, &mut ynew);
                k.swap(0, 6);
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                if !last || fac < 1.0 {
                    h = hs * fac;
                }
            } else {
                h = hs * (0.9 * err.powf(-0.2)).max(0.2);
            }
            if h < 1e-14 * t.abs().max(1.0) {
                return Err(Error::Numerical(format!("step size underflow at t={t}")));
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let out = integrate(|_, y, d| d[0] = -y[0], 0.0, &[1.0], &[0.5, 1.0, 3.0], &OdeOptions::default()).unwrap();
        for (t, y) in [0.5, 1.0, 3.0].iter().zip(out) {
            assert!((y[0] - (-t as f64).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn harmonic_oscillator() {
        let opts = OdeOptions { rtol: 1e-10, atol: 1e-12, ..Default::default() };
        let out = integrate(
            |_, y, d| {
                d[0] = y[1];
                d[1] = -y[0];
            },
            0.0,
            &[1.0, 0.0],
            &[10.0],
            &opts,
        )
        .unwrap();
        assert!((out[0][0] - 10f64.cos()).abs() < 1e-8);
        assert!((out[0][1] + 10f64.sin()).abs() < 1e-8);
    }

    #[test]
    fn output_at_start_time() {
        let out = integrate(|_, _, d| d[0] = 1.0, 0.0, &[2.0], &[0.0, 1.0], &OdeOptions::default()).unwrap();
        assert_eq!(out[0][0], 2.0);
        assert!((out[1][0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_decreasing_times() {
        assert!(integrate(|_, _, d| d[0] = 0.0, 0.0, &[0.0], &[1.0, 0.5], &OdeOptions::default()).is_err());
    }
}
