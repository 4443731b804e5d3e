//! Closed-form means, variances and covariances of the population, the
//! cumulative birth and death counts and the path integral.
//!
//! Every formula with an `eta = 0` branch is evaluated in three regimes:
//! the `eta = 0` branch for `|eta| <= ETA_TOL`, rearranged forms built on
//! [`crate::special`] helpers for `|eta| <= STABLE_BAND`, and the direct
//! expressions otherwise.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kolmogorov::P0Curve;
use crate::model::{DerivedConstants, ModelSpec, Variant};
use crate::special::{e1, e2, f, g};

pub const ETA_TOL: f64 = 1e-10;
pub const STABLE_BAND: f64 = 1e-6;
/// Absolute tolerance of the adaptive Simpson quadrature.
pub const QUADRATURE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Regime {
    Zero,
    Stable,
    Direct,
}

fn regime(eta: f64) -> Regime {
    if eta.abs() <= ETA_TOL {
        Regime::Zero
    } else if eta.abs() <= STABLE_BAND {
        Regime::Stable
    } else {
        Regime::Direct
    }
}

/// Named moments at one time.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub t: f64,
    pub values: BTreeMap<String, f64>,
}

impl MomentReport {
    fn new(t: f64) -> Self {
        MomentReport { t, values: BTreeMap::new() }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    fn set(&mut self, name: &str, value: f64) {
        self.values.insert(name.to_string(), value);
    }

    /// Adds `corr_<pair>` when both variances are positive.
    fn correlate(&mut self, pair: &str, cov: f64, var_a: f64, var_b: f64) {
        let denom = (var_a * var_b).sqrt();
        if denom > 0.0 {
            self.set(&format!("corr_{pair}"), cov / denom);
        }
    }

    fn merge(&mut self, other: MomentReport) {
        self.values.extend(other.values);
    }
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("time must be finite and non-negative, got {t}")))
    }
}

fn linear_constants(spec: &ModelSpec, what: &str, t: f64) -> Result<DerivedConstants> {
    spec.require(&[Variant::Linear], what)?;
    check_time(t)?;
    spec.derived_constants()
}

fn mean_n(c: &DerivedConstants, t: f64) -> f64 {
    match regime(c.eta) {
        Regime::Zero => 1.0,
        _ => (c.eta * t).exp(),
    }
}

fn var_n(c: &DerivedConstants, t: f64) -> f64 {
    let (eta, zeta) = (c.eta, c.zeta);
    match regime(eta) {
        Regime::Zero => zeta * t,
        Regime::Stable => zeta * (eta * t).exp() * t * e1(eta * t),
        Regime::Direct => zeta * ((2.0 * eta * t).exp() - (eta * t).exp()) / eta,
    }
}

/// Mean and variance of the population started from one individual.
pub fn glbdp_moments(spec: &ModelSpec, t: f64) -> Result<MomentReport> {
    let c = linear_constants(spec, "glbdp_moments", t)?;
    let mut r = MomentReport::new(t);
    r.set("mean_N", mean_n(&c, t));
    r.set("var_N", var_n(&c, t));
    Ok(r)
}

struct CountMoments {
    mean: f64,
    var: f64,
    cov_n: f64,
}

fn births(c: &DerivedConstants, t: f64) -> CountMoments {
    let (eta, zeta, xi) = (c.eta, c.zeta, c.xi);
    let (a, a2) = (c.birth_first, c.birth_second);
    let x = eta * t;
    match regime(eta) {
        Regime::Zero => CountMoments {
            mean: a * t + 1.0,
            var: a2 * t + a * (a2 * t * t + zeta * a * t.powi(3) / 3.0),
            cov_n: a2 * t + zeta * a * t * t / 2.0,
        },
        Regime::Stable => CountMoments {
            mean: 1.0 + a * t * e1(x),
            var: a2 * t * e1(x) + 2.0 * a * t * t * (a * zeta * t * g(x) + a2 * f(x)),
            cov_n: x.exp() * t * (a * zeta * t * e2(x) + a2),
        },
        Regime::Direct => {
            let ex = x.exp();
            CountMoments {
                mean: a / eta * ex - c.death_first / eta,
                var: a2 / eta * (ex - 1.0)
                    + 2.0
                        * a
                        * (zeta * a / (2.0 * eta.powi(3)) * (ex - 1.0).powi(2)
                            - xi / eta.powi(3) * (x * ex - ex + 1.0)),
                cov_n: zeta * a / (eta * eta) * (ex * ex - ex) - xi / eta * t * ex,
            }
        }
    }
}

fn deaths(c: &DerivedConstants, t: f64) -> CountMoments {
    let (eta, zeta, xi) = (c.eta, c.zeta, c.xi);
    let (d, d2) = (c.death_first, c.death_second);
    let x = eta * t;
    match regime(eta) {
        Regime::Zero => CountMoments {
            mean: d * t,
            var: d2 * t + d * (-d2 * t * t + zeta * d * t.powi(3) / 3.0),
            cov_n: -d2 * t + zeta * d * t * t / 2.0,
        },
        Regime::Stable => CountMoments {
            mean: d * t * e1(x),
            var: d2 * t * e1(x) + 2.0 * d * t * t * (d * zeta * t * g(x) - d2 * f(x)),
            cov_n: x.exp() * t * (d * zeta * t * e2(x) - d2),
        },
        Regime::Direct => {
            let ex = x.exp();
            CountMoments {
                mean: d / eta * (ex - 1.0),
                var: d2 / eta * (ex - 1.0)
                    + 2.0
                        * d
                        * (zeta * d / (2.0 * eta.powi(3)) * (ex - 1.0).powi(2)
                            - xi / eta.powi(3) * (x * ex - ex + 1.0)),
                cov_n: zeta * d / (eta * eta) * (ex * ex - ex) - xi / eta * t * ex,
            }
        }
    }
}

/// Mean and variance of the cumulative birth count `B(t)` (the initial
/// individual counts as one birth) and its covariance with `N(t)`.
pub fn birth_moments(spec: &ModelSpec, t: f64) -> Result<MomentReport> {
    let c = linear_constants(spec, "birth_moments", t)?;
    let m = births(&c, t);
    let mut r = MomentReport::new(t);
    r.set("mean_B", m.mean);
    r.set("var_B", m.var);
    r.set("cov_BN", m.cov_n);
    r.correlate("BN", m.cov_n, m.var, var_n(&c, t));
    Ok(r)
}

/// Mean and variance of the cumulative death count `D(t)` and its
/// covariance with `N(t)`.
pub fn death_moments(spec: &ModelSpec, t: f64) -> Result<MomentReport> {
    let c = linear_constants(spec, "death_moments", t)?;
    let m = deaths(&c, t);
    let mut r = MomentReport::new(t);
    r.set("mean_D", m.mean);
    r.set("var_D", m.var);
    r.set("cov_DN", m.cov_n);
    r.correlate("DN", m.cov_n, m.var, var_n(&c, t));
    Ok(r)
}

/// Which expression produced [`BirthDeathCovariance::value`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceRoute {
    ClosedForm,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BirthDeathCovariance {
    pub value: f64,
    /// `(Var B + Var D - Var N) / 2`.
    pub identity: f64,
    pub route: CovarianceRoute,
}

/// Covariance of `D(t)` and `B(t)`. The closed form needs `eta != 0`; near
/// zero the identity route is used and flagged.
pub fn cov_births_deaths(spec: &ModelSpec, t: f64) -> Result<BirthDeathCovariance> {
    let c = linear_constants(spec, "cov_births_deaths", t)?;
    let identity = 0.5 * (births(&c, t).var + deaths(&c, t).var - var_n(&c, t));
    let (eta, zeta, xi) = (c.eta, c.zeta, c.xi);
    let (a, a2, d, d2) = (c.birth_first, c.birth_second, c.death_first, c.death_second);
    let x = eta * t;
    let (value, route) = match regime(eta) {
        Regime::Zero => (identity, CovarianceRoute::Identity),
        Regime::Stable => (
            t * t * (2.0 * a * d * zeta * t * g(x) + (a2 * d - a * d2) * f(x)),
            CovarianceRoute::ClosedForm,
        ),
        Regime::Direct => {
            let ex = x.exp();
            (
                zeta * a * d / eta.powi(3) * (ex - 1.0).powi(2)
                    - xi / eta.powi(3) * (a + d) * (x * ex - ex + 1.0),
                CovarianceRoute::ClosedForm,
            )
        }
    };
    Ok(BirthDeathCovariance { value, identity, route })
}

fn path_integral(c: &DerivedConstants, t: f64) -> CountMoments {
    let (eta, zeta) = (c.eta, c.zeta);
    let x = eta * t;
    match regime(eta) {
        Regime::Zero => CountMoments { mean: t, var: zeta * t.powi(3) / 3.0, cov_n: zeta * t * t / 2.0 },
        Regime::Stable => CountMoments {
            mean: t * e1(x),
            var: 2.0 * zeta * t.powi(3) * g(x),
            cov_n: zeta * x.exp() * t * t * e2(x),
        },
        Regime::Direct => {
            let ex = x.exp();
            CountMoments {
                mean: (ex - 1.0) / eta,
                var: 2.0 * zeta / (eta * eta) * ((ex * ex - 1.0) / (2.0 * eta) - t * ex),
                cov_n: zeta / (eta * eta) * (ex * ex - ex - x * ex),
            }
        }
    }
}

/// Moments of `X(t) = int_0^t N(s) ds` and its covariance with `N(t)`.
pub fn path_integral_moments(spec: &ModelSpec, t: f64) -> Result<MomentReport> {
    let c = linear_constants(spec, "path_integral_moments", t)?;
    let m = path_integral(&c, t);
    let mut r = MomentReport::new(t);
    r.set("mean_X", m.mean);
    r.set("var_X", m.var);
    r.set("cov_NX", m.cov_n);
    r.correlate("NX", m.cov_n, var_n(&c, t), m.var);
    Ok(r)
}

/// Every linear-case moment at `t` in one report.
pub fn linear_moments(spec: &ModelSpec, t: f64) -> Result<MomentReport> {
    let mut r = glbdp_moments(spec, t)?;
    r.merge(birth_moments(spec, t)?);
    r.merge(death_moments(spec, t)?);
    r.merge(path_integral_moments(spec, t)?);
    let cdb = cov_births_deaths(spec, t)?;
    r.set("cov_DB", cdb.value);
    let (vd, vb) = (r.get("var_D").unwrap(), r.get("var_B").unwrap());
    r.correlate("DB", cdb.value, vd, vb);
    Ok(r)
}

/// Covariance matrix of `(D*, B*, N*)` in that order.
pub type CovarianceMatrix = [[f64; 3]; 3];

fn constant_constants(spec: &ModelSpec, what: &str, t: f64) -> Result<DerivedConstants> {
    spec.require(&[Variant::Constant], what)?;
    check_time(t)?;
    spec.derived_constants()
}

/// Moments of the constant-rate process and the covariance matrix of
/// `(D*, B*, N*)`. Exact on the integer lattice; on the non-negative
/// lattice they hold while the boundary is out of reach.
pub fn constant_moments(spec: &ModelSpec, t: f64) -> Result<(MomentReport, CovarianceMatrix)> {
    let c = constant_constants(spec, "constant_moments", t)?;
    let (a, a2, d, d2) = (c.birth_first, c.birth_second, c.death_first, c.death_second);
    let mut r = MomentReport::new(t);
    r.set("mean_N", 1.0 + c.eta * t);
    r.set("var_N", c.zeta * t);
    r.set("mean_B", 1.0 + a * t);
    r.set("var_B", a2 * t);
    r.set("mean_D", d * t);
    r.set("var_D", d2 * t);
    r.set("cov_BN", a2 * t);
    r.set("cov_DN", -d2 * t);
    r.set("cov_DB", 0.0);
    r.correlate("BN", a2 * t, a2 * t, c.zeta * t);
    r.correlate("DN", -d2 * t, d2 * t, c.zeta * t);
    r.correlate("DB", 0.0, d2 * t, a2 * t);
    let sigma = [[d2 * t, 0.0, -d2 * t], [0.0, a2 * t, a2 * t], [-d2 * t, a2 * t, c.zeta * t]];
    Ok((r, sigma))
}

/// Moments of the constant-rate path integral `X*(t)`.
pub fn path_integral_moments_constant(spec: &ModelSpec, t: f64) -> Result<MomentReport> {
    let c = constant_constants(spec, "path_integral_moments_constant", t)?;
    let mut r = MomentReport::new(t);
    let (var_n, var_x, cov) = (c.zeta * t, c.zeta * t.powi(3) / 3.0, c.zeta * t * t / 2.0);
    r.set("mean_X", t + c.eta * t * t / 2.0);
    r.set("var_X", var_x);
    r.set("cov_NX", cov);
    r.correlate("NX", cov, var_n, var_x);
    Ok(r)
}

fn simpson_step<F: Fn(f64) -> f64>(h: &F, a: f64, fa: f64, b: f64, fb: f64, m: f64, fm: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (h(lm), h(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(h, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
        + simpson_step(h, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature of `h` over `[a, b]`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(h: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fb, fm) = (h(a), h(b), h(m));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(&h, a, fa, b, fb, m, fm, whole, tol, 48)
}

/// Mean population of an immigration model started from one individual.
/// Immigration at zero needs `p(0, s)` on `[0, t]`.
pub fn immigration_mean(spec: &ModelSpec, t: f64, p0: Option<&P0Curve>) -> Result<f64> {
    spec.require(&[Variant::ImmigrationAtZero, Variant::ImmigrationEverywhere], "immigration_mean")?;
    check_time(t)?;
    let c = spec.derived_constants()?;
    let k1 = spec.k1() as f64;
    let drift = spec.nu() * k1 * (k1 + 1.0) / 2.0;
    let eta = c.eta;
    match spec.variant() {
        Variant::ImmigrationEverywhere => Ok(match regime(eta) {
            Regime::Zero => 1.0 + drift * t,
            _ => (eta * t).exp() + drift * t * e1(eta * t),
        }),
        _ => {
            let curve = p0.ok_or_else(|| {
                Error::Dependency("immigration at zero needs a p(0, s) curve covering [0, t]".into())
            })?;
            if curve.end() < t * (1.0 - 1e-12) {
                return Err(Error::Dependency(format!(
                    "p(0, s) curve ends at {} before t = {t}",
                    curve.end()
                )));
            }
            let integral = adaptive_simpson(|s| (-eta * s).exp() * curve.eval(s), 0.0, t, QUADRATURE_TOL);
            Ok((eta * t).exp() * (1.0 + drift * integral))
        }
    }
}

/// Means of the parking model from an empty lot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ParkingMeans {
    pub parked: f64,
    pub arrivals: f64,
    pub departures: f64,
    /// Time-averaged expected occupancy `E X(t) / t`, 0 at `t = 0`.
    pub occupancy: f64,
}

/// Means of the parked count, arrivals, departures and the average
/// occupancy.
pub fn parking_means(spec: &ModelSpec, t: f64) -> Result<ParkingMeans> {
    spec.require(&[Variant::Parking], "parking_means")?;
    check_time(t)?;
    let c = spec.derived_constants()?;
    let k = spec.capacity().unwrap_or(0) as f64;
    let (a, d, beta) = (c.birth_first, c.death_first, c.beta);
    if beta <= 0.0 {
        return Ok(ParkingMeans { parked: 0.0, arrivals: 0.0, departures: 0.0, occupancy: 0.0 });
    }
    // 1 - (1 - e^{-beta t}) / (beta t)
    let shortfall = 1.0 - e1(-beta * t);
    let level = k * a / beta;
    Ok(ParkingMeans {
        parked: -level * (-beta * t).exp_m1(),
        arrivals: a * (k * t - level * t * shortfall),
        departures: k * a * d * t * shortfall / beta,
        occupancy: level * shortfall,
    })
}

/// Long-run expected number parked, `K sum(i lambda_i) / beta`.
pub fn parking_limit(spec: &ModelSpec) -> Result<f64> {
    spec.require(&[Variant::Parking], "parking_limit")?;
    let c = spec.derived_constants()?;
    let k = spec.capacity().unwrap_or(0) as f64;
    Ok(if c.beta > 0.0 { k * c.birth_first / c.beta } else { 0.0 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Limit {
    Finite(f64),
    Infinite,
}

/// `t -> infinity` limits of `E N(t)` and `E B(t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LimitReport {
    pub mean_n: Limit,
    pub mean_b: Limit,
}

pub fn limit_report(spec: &ModelSpec) -> Result<LimitReport> {
    spec.require(&[Variant::Linear], "limit_report")?;
    let c = spec.derived_constants()?;
    Ok(match regime(c.eta) {
        Regime::Zero => LimitReport { mean_n: Limit::Finite(1.0), mean_b: Limit::Infinite },
        _ if c.eta > 0.0 => LimitReport { mean_n: Limit::Infinite, mean_b: Limit::Infinite },
        _ => LimitReport {
            mean_n: Limit::Finite(0.0),
            mean_b: Limit::Finite(-c.death_first / c.eta),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kolmogorov::{p0_curve, solve_joint_birth, solve_joint_death, solve_parking_joint, ParkingCount, SolveOptions};
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    // Second moments of a grid are sensitive to tail mass, so the oracle
    // solves leave at most 1e-13 outside the window, a level only the
    // uniformization backend resolves cleanly.
    fn tight() -> SolveOptions {
        let mut o = SolveOptions::default();
        o.window.deficit_tolerance = 1e-13;
        o.window.backend = crate::lattice::Backend::Uniformization;
        o.window.poisson_tolerance = 1e-15;
        o.window.max_states = 1 << 20;
        o
    }

    fn lin(l: &[f64], m: &[f64]) -> ModelSpec {
        ModelSpec::linear(l.to_vec(), m.to_vec()).unwrap()
    }

    #[test]
    fn population_examples() {
        let r = glbdp_moments(&lin(&[2.0], &[1.0]), 1.0).unwrap();
        let e = 1f64.exp();
        assert!(close(r.get("mean_N").unwrap(), e, 1e-14));
        assert!(close(r.get("var_N").unwrap(), 3.0 * (e * e - e), 1e-14));
        let r = glbdp_moments(&lin(&[1.0], &[1.0]), 2.5).unwrap();
        assert_eq!(r.get("mean_N"), Some(1.0));
        assert!(close(r.get("var_N").unwrap(), 2.0 * 2.5, 1e-15));
        let r = linear_moments(&lin(&[1.0, 0.5], &[0.5]), 0.0).unwrap();
        for k in ["var_N", "var_B", "cov_BN", "mean_D", "var_D", "cov_DN", "cov_DB", "mean_X", "var_X", "cov_NX"] {
            assert_eq!(r.get(k), Some(0.0), "{k}");
        }
        assert_eq!(r.get("mean_B"), Some(1.0));
        assert!(r.get("corr_BN").is_none());
    }

    #[test]
    fn zero_drift_branches_match_displayed_values() {
        // a = 2, A2 = 3, c = 2, C2 = 2, zeta = 5
        let spec = lin(&[1.0, 0.5], &[2.0]);
        let c = spec.derived_constants().unwrap();
        assert_eq!(c.eta, 0.0);
        let t = 1.7;
        let b = birth_moments(&spec, t).unwrap();
        assert!(close(b.get("mean_B").unwrap(), 2.0 * t + 1.0, 1e-15));
        let d = death_moments(&spec, t).unwrap();
        assert!(close(d.get("cov_DN").unwrap(), -2.0 * t + 5.0 * 2.0 * t * t / 2.0, 1e-15));
        let x = path_integral_moments(&spec, t).unwrap();
        assert!(close(x.get("var_X").unwrap(), 5.0 * t.powi(3) / 3.0, 1e-15));
        assert_eq!(x.get("mean_X"), Some(t));
        let cov = cov_births_deaths(&spec, t).unwrap();
        assert_eq!(cov.route, CovarianceRoute::Identity);
    }

    fn all_quantities(spec: &ModelSpec, t: f64) -> Vec<(String, f64)> {
        let mut r = linear_moments(spec, t).unwrap().values;
        r.retain(|k, _| !k.starts_with("corr"));
        r.into_iter().collect()
    }

    #[test]
    fn branch_continuity_near_zero_drift() {
        let zero = lin(&[1.0, 0.5], &[2.0]);
        for delta in [1e-8, -1e-8] {
            let near = lin(&[1.0 + delta, 0.5], &[2.0]);
            assert!(near.derived_constants().unwrap().eta.abs() > ETA_TOL);
            for t in [0.3, 1.0, 4.0] {
                let z = all_quantities(&zero, t);
                let n = all_quantities(&near, t);
                for ((k, a), (_, b)) in z.iter().zip(&n) {
                    assert!(close(*a, *b, 1e-6), "{k} at t={t}: {a} vs {b}");
                }
                let cov = cov_births_deaths(&near, t).unwrap();
                assert_eq!(cov.route, CovarianceRoute::ClosedForm);
            }
        }
    }

    #[test]
    fn stable_forms_agree_with_direct_forms() {
        // Evaluate both tiers on the same constants by scaling eta into each band.
        for eta in [0.3, -0.7, 1.2] {
            let spec = lin(&[1.0 + eta, 0.5], &[2.0]);
            let c = spec.derived_constants().unwrap();
            for t in [0.5, 2.0] {
                let x = c.eta * t;
                let b = births(&c, t);
                let d = deaths(&c, t);
                let p = path_integral(&c, t);
                let (a, a2, dd, d2, zeta) = (c.birth_first, c.birth_second, c.death_first, c.death_second, c.zeta);
                let stable = [
                    1.0 + a * t * e1(x),
                    a2 * t * e1(x) + 2.0 * a * t * t * (a * zeta * t * g(x) + a2 * f(x)),
                    x.exp() * t * (a * zeta * t * e2(x) + a2),
                    dd * t * e1(x),
                    d2 * t * e1(x) + 2.0 * dd * t * t * (dd * zeta * t * g(x) - d2 * f(x)),
                    x.exp() * t * (dd * zeta * t * e2(x) - d2),
                    t * e1(x),
                    2.0 * zeta * t.powi(3) * g(x),
                    zeta * x.exp() * t * t * e2(x),
                ];
                let direct = [b.mean, b.var, b.cov_n, d.mean, d.var, d.cov_n, p.mean, p.var, p.cov_n];
                for (k, (s, dv)) in stable.iter().zip(direct).enumerate() {
                    assert!(close(*s, dv, 1e-12), "{k}: {s} vs {dv}");
                }
            }
        }
    }

    #[test]
    fn covariance_closed_form_matches_identity() {
        let spec = lin(&[1.0, 0.5], &[0.5, 0.25]);
        for t in [0.2, 1.0, 3.0] {
            let c = cov_births_deaths(&spec, t).unwrap();
            assert!(close(c.value, c.identity, 1e-10), "{} vs {}", c.value, c.identity);
            let r = linear_moments(&spec, t).unwrap();
            let lhs = r.get("var_N").unwrap();
            let rhs = r.get("var_B").unwrap() + r.get("var_D").unwrap() - 2.0 * r.get("cov_DB").unwrap();
            assert!((lhs - rhs).abs() <= 1e-9 * lhs.max(1.0));
        }
        assert_eq!(cov_births_deaths(&spec, 0.0).unwrap().value, 0.0);
    }

    #[test]
    fn birth_block_matches_grid() {
        let spec = lin(&[1.0, 0.5], &[1.0]);
        let t = 1.0;
        let grid = &solve_joint_birth(&spec, 1, &[t], &tight()).unwrap()[0];
        let r = birth_moments(&spec, t).unwrap();
        assert!(close(r.get("mean_B").unwrap(), grid.mean("b").unwrap(), 1e-9));
        assert!(close(r.get("var_B").unwrap(), grid.variance("b").unwrap(), 1e-9));
        assert!(close(r.get("cov_BN").unwrap(), grid.covariance("b", "n").unwrap(), 1e-9));
    }

    #[test]
    fn death_block_matches_grid() {
        let spec = lin(&[1.0, 0.5], &[2.0]);
        let t = 1.0;
        let grid = &solve_joint_death(&spec, 1, &[t], &tight()).unwrap()[0];
        let r = death_moments(&spec, t).unwrap();
        assert!(close(r.get("mean_D").unwrap(), grid.mean("d").unwrap(), 1e-9));
        let (vd, gd) = (r.get("var_D").unwrap(), grid.variance("d").unwrap());
        assert!(close(vd, gd, 1e-9), "{vd} vs {gd}");
        assert!(close(r.get("cov_DN").unwrap(), grid.covariance("d", "n").unwrap(), 1e-9));
    }

    #[test]
    fn constant_matrix() {
        let spec = ModelSpec::constant(vec![1.0, 0.5], vec![0.5, 0.25]).unwrap();
        let (r, s) = constant_moments(&spec, 1.0).unwrap();
        assert_eq!(s[0][1], 0.0);
        assert_eq!(s[0][2], -(0.5 + 4.0 * 0.25));
        assert_eq!(s[1][2], 1.0 + 4.0 * 0.5);
        assert_eq!(r.get("mean_N"), Some(1.0 + 2.0 - 1.0));
        let (_, s0) = constant_moments(&spec, 0.0).unwrap();
        assert_eq!(s0, [[0.0; 3]; 3]);
        let x = path_integral_moments_constant(&ModelSpec::constant(vec![2.0], vec![1.0]).unwrap(), 1.0).unwrap();
        assert_eq!(x.get("mean_X"), Some(1.5));
    }

    #[test]
    fn limits() {
        let up = limit_report(&lin(&[2.0], &[1.0])).unwrap();
        assert_eq!(up, LimitReport { mean_n: Limit::Infinite, mean_b: Limit::Infinite });
        let flat = limit_report(&lin(&[1.0], &[1.0])).unwrap();
        assert_eq!(flat.mean_n, Limit::Finite(1.0));
        let down = limit_report(&lin(&[1.0], &[2.0])).unwrap();
        assert_eq!(down, LimitReport { mean_n: Limit::Finite(0.0), mean_b: Limit::Finite(2.0) });
        let down = lin(&[1.0], &[2.0]);
        let b = birth_moments(&down, 60.0).unwrap().get("mean_B").unwrap();
        assert!(close(b, 2.0, 1e-12));
        let x = path_integral_moments(&down, 60.0).unwrap().get("mean_X").unwrap();
        assert!(close(x, 1.0, 1e-12));
    }

    #[test]
    fn immigration_everywhere_values() {
        let spec = ModelSpec::immigration_everywhere(vec![1.0, 0.5], vec![2.0], 0.3).unwrap();
        assert!(close(immigration_mean(&spec, 2.0, None).unwrap(), 1.0 + 6.0 * 0.3 * 2.0 / 2.0, 1e-15));
        let down = ModelSpec::immigration_everywhere(vec![1.0], vec![2.0], 0.4).unwrap();
        assert!(close(immigration_mean(&down, 80.0, None).unwrap(), 0.4, 1e-12));
        let none = ModelSpec::immigration_everywhere(vec![2.0], vec![1.0], 0.0).unwrap();
        assert!(close(immigration_mean(&none, 1.3, None).unwrap(), 1.3f64.exp(), 1e-15));
    }

    #[test]
    fn immigration_at_zero_matches_forward_mean() {
        let spec = ModelSpec::immigration_at_zero(vec![1.0], vec![1.5], 0.7).unwrap();
        let opts = SolveOptions::default();
        assert!(matches!(immigration_mean(&spec, 1.0, None), Err(Error::Dependency(_))));
        let curve = p0_curve(&spec, 2.0, 200, &opts).unwrap();
        let m = immigration_mean(&spec, 2.0, Some(&curve)).unwrap();
        let pmf = &crate::kolmogorov::solve_state_probabilities(&spec, &crate::kolmogorov::point_mass(1), &[2.0], &opts).unwrap()[0];
        assert!(close(m, pmf.mean(), 1e-6), "{m} vs {}", pmf.mean());
        let short = p0_curve(&spec, 1.0, 10, &opts).unwrap();
        assert!(matches!(immigration_mean(&spec, 2.0, Some(&short)), Err(Error::Dependency(_))));
    }

    #[test]
    fn parking_matches_grid() {
        let spec = ModelSpec::parking(vec![0.2], vec![0.3], 10).unwrap();
        let t = 2.0;
        let pm = parking_means(&spec, t).unwrap();
        let opts = SolveOptions::default();
        let arr = &solve_parking_joint(&spec, ParkingCount::Arrivals, &[t], &opts).unwrap()[0];
        let dep = &solve_parking_joint(&spec, ParkingCount::Departures, &[t], &opts).unwrap()[0];
        assert!(close(pm.parked, arr.mean("n").unwrap(), 1e-7));
        assert!(close(pm.arrivals, arr.mean("a").unwrap(), 1e-7));
        assert!(close(pm.departures, dep.mean("d").unwrap(), 1e-7));
        assert!(parking_limit(&spec).unwrap() < 10.0);
        let zero = parking_means(&spec, 0.0).unwrap();
        assert_eq!(zero, ParkingMeans { parked: 0.0, arrivals: 0.0, departures: 0.0, occupancy: 0.0 });
        let late = parking_means(&spec, 400.0).unwrap();
        assert!(close(late.parked, parking_limit(&spec).unwrap(), 1e-12));
    }

    #[test]
    fn simpson_integrates_smooth_functions() {
        let v = adaptive_simpson(|s| s.sin(), 0.0, std::f64::consts::PI, 1e-12);
        assert!((v - 2.0).abs() < 1e-11);
    }

    proptest! {
        #[test]
        fn correlations_bounded_and_variances_nonnegative(
            l1 in 0.1f64..2.0, l2 in 0.1f64..2.0, m1 in 0.1f64..2.0, m2 in 0.1f64..2.0, t in 0.1f64..5.0,
        ) {
            let r = linear_moments(&lin(&[l1, l2], &[m1, m2]), t).unwrap();
            for (k, v) in &r.values {
                if k.starts_with("corr") {
                    prop_assert!(v.abs() <= 1.0);
                }
                if k.starts_with("var") {
                    prop_assert!(*v >= -1e-9 * (1.0 + v.abs()), "{} = {}", k, v);
                }
            }
            let lhs = r.values["var_N"];
            let rhs = r.values["var_B"] + r.values["var_D"] - 2.0 * r.values["cov_DB"];
            prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0));
        }
    }
}
