//! Roots of real polynomials by simultaneous Aberth-Ehrlich iteration.

use num_complex::Complex64;

use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 1000;
const NEWTON_POLISH: usize = 3;

/// Evaluate `sum coeffs[k] u^k` and its derivative by Horner's rule.
pub fn eval_with_derivative(coeffs: &[f64], u: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::new(0.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for &c in coeffs.iter().rev() {
        dp = dp * u + p;
        p = p * u + c;
    }
    (p, dp)
}

pub fn eval(coeffs: &[f64], u: Complex64) -> Complex64 {
    eval_with_derivative(coeffs, u).0
}

/// All complex roots of the polynomial with ascending coefficients
/// `coeffs`, whose last entry must be nonzero.
pub fn polynomial_roots(coeffs: &[f64], tol: f64) -> Result<Vec<Complex64>> {
    let n = coeffs.len().saturating_sub(1);
    let lead = *coeffs.last().ok_or_else(|| Error::domain("empty polynomial"))?;
    if lead == 0.0 || !lead.is_finite() {
        return Err(Error::domain("polynomial has a zero or non-finite leading coefficient"));
    }
    if coeffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::domain("polynomial has non-finite coefficients"));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    // Cauchy bound on the root moduli.
    let radius = 1.0 + coeffs[..n].iter().map(|c| (c / lead).abs()).fold(0.0, f64::max);
    let mut z: Vec<Complex64> = (0..n)
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / n as f64 + 0.4;
            Complex64::from_polar(0.5 * radius, angle)
        })
        .collect();
    let mut converged = vec![false; n];
    for _ in 0..MAX_ITERATIONS {
        if converged.iter().all(|&c| c) {
            break;
        }
        for i in 0..n {
            if converged[i] {
                continue;
            }
            let (p, dp) = eval_with_derivative(coeffs, z[i]);
            if p == Complex64::new(0.0, 0.0) {
                converged[i] = true;
                continue;
            }
            let ratio = p / dp;
            let repulsion: Complex64 = (0..n).filter(|&j| j != i).map(|j| 1.0 / (z[i] - z[j])).sum();
            let step = ratio / (1.0 - ratio * repulsion);
            z[i] -= step;
            if step.norm() <= tol * z[i].norm().max(1.0) {
                converged[i] = true;
            }
        }
    }
    if !converged.iter().all(|&c| c) {
        return Err(Error::Numerical("Aberth iteration did not converge".into()));
    }
    for r in z.iter_mut() {
        for _ in 0..NEWTON_POLISH {
            let (p, dp) = eval_with_derivative(coeffs, *r);
            if dp.norm() == 0.0 {
                break;
            }
            let next = *r - p / dp;
            if eval(coeffs, next).norm() < p.norm() {
                *r = next;
            } else {
                break;
            }
        }
    }
    Ok(z)
}
