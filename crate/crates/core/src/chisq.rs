//! Chi-square distribution function and quantiles.

use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};

/// Target accuracy of [`quantile`], in probability.
pub const QUANTILE_TOL: f64 = 1e-10;

pub fn cdf(dof: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_lr(dof / 2.0, x / 2.0)
    }
}

/// Upper tail `1 - cdf`, without cancellation.
pub fn sf(dof: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        gamma_ur(dof / 2.0, x / 2.0)
    }
}

pub fn pdf(dof: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let k = dof / 2.0;
    ((k - 1.0) * (x / 2.0).ln() - x / 2.0 - ln_gamma(k)).exp() / 2.0
}

/// `x` with `cdf(dof, x) = p`, found by safeguarded Newton iteration.
pub fn quantile(dof: f64, p: f64) -> Result<f64> {
    if !(dof > 0.0) || !dof.is_finite() {
        return Err(Error::domain("degrees of freedom must be positive and finite"));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("probability must lie in (0, 1), got {p}")));
    }
    // Work on whichever tail is smaller so the residual keeps its precision.
    let upper = p > 0.5;
    let target = if upper { 1.0 - p } else { p };
    let resid = |x: f64| if upper { target - sf(dof, x) } else { cdf(dof, x) - target };
    let (mut lo, mut hi) = (0.0, dof.max(1.0));
    while resid(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Numerical("chi-square quantile bracket overflowed".into()));
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..500 {
        let r = resid(x);
        if r.abs() <= 1e-3 * QUANTILE_TOL * target {
            return Ok(x);
        }
        if r < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = pdf(dof, x);
        let newton = if d > 0.0 { x - r / d } else { f64::NAN };
        x = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= 1e-15 * hi {
            return Ok(x);
        }
    }
    Err(Error::Numerical("chi-square quantile did not converge".into()))
}
