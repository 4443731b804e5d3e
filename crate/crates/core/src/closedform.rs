//! Exact laws of the constant-rate process.
//!
//! With constant rates, births of size `i` arrive as independent Poisson
//! streams of rate `lambda_i` and deaths of size `j` as streams of rate
//! `mu_j`. Writing `S+ = sum i x_i` and `S- = sum j y_j` for the counts
//! `x_i ~ Poisson(lambda_i t)`, `y_j ~ Poisson(mu_j t)`, the population is
//! `1 + S+ - S-`, cumulative births are `1 + S+` and cumulative deaths are
//! `S-`. Every pmf here is a convolution of these lattice laws. This is the
//! law of the walk on all integers (see [`Lattice::Integers`]).
//!
//! [`Lattice::Integers`]: crate::model::Lattice::Integers

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kolmogorov::TruncatedPmf;
use crate::model::{ModelSpec, State, Variant};
use crate::special::{e1, poisson_window};

/// Default absolute error of a closed-form pmf value.
pub const DEFAULT_TOLERANCE: f64 = 1e-12;
/// Largest tail mass dropped from any single Poisson stream.
pub const STREAM_TAIL: f64 = 1e-15;

/// Probability weights on consecutive integers starting at `offset`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatticeLaw {
    pub offset: State,
    pub weights: Vec<f64>,
    /// Upper bound on the probability mass not represented in `weights`.
    pub tail_bound: f64,
}

impl LatticeLaw {
    pub fn point(at: State) -> Self {
        LatticeLaw { offset: at, weights: vec![1.0], tail_bound: 0.0 }
    }

    pub fn prob(&self, x: State) -> f64 {
        let k = x - self.offset;
        if k < 0 {
            return 0.0;
        }
        self.weights.get(k as usize).copied().unwrap_or(0.0)
    }

    /// Law of `X + Y` for independent `X ~ self`, `Y ~ other`.
    pub fn convolve(&self, other: &LatticeLaw) -> LatticeLaw {
        let mut w = vec![0.0; self.weights.len() + other.weights.len() - 1];
        for (a, &pa) in self.weights.iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            for (b, &pb) in other.weights.iter().enumerate() {
                w[a + b] += pa * pb;
            }
        }
        LatticeLaw {
            offset: self.offset + other.offset,
            weights: w,
            tail_bound: self.tail_bound + other.tail_bound,
        }
    }

    /// Law of `c - X`.
    pub fn reflect(&self, c: State) -> LatticeLaw {
        let mut w = self.weights.clone();
        w.reverse();
        LatticeLaw { offset: c - (self.offset + self.weights.len() as State - 1), weights: w, tail_bound: self.tail_bound }
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().enumerate().map(|(k, p)| (self.offset + k as State) as f64 * p).sum()
    }
}

/// Law of `size * Poisson(mean)`.
fn scaled_poisson(mean: f64, size: usize, tail: f64) -> LatticeLaw {
    let (lo, w, tb) = poisson_window(mean, tail);
    let mut weights = vec![0.0; (w.len() - 1) * size + 1];
    for (k, p) in w.into_iter().enumerate() {
        weights[k * size] = p;
    }
    LatticeLaw { offset: (lo * size) as State, weights, tail_bound: tb }
}

/// Law of `sum_k k * Poisson(rates[k-1] * t)`.
fn stream_law(rates: &[f64], t: f64, tail: f64) -> LatticeLaw {
    rates
        .iter()
        .enumerate()
        .filter(|(_, &r)| r > 0.0)
        .fold(LatticeLaw::point(0), |acc, (k, &r)| acc.convolve(&scaled_poisson(r * t, k + 1, tail)))
}

fn per_stream_tail(spec: &ModelSpec, tol: f64) -> f64 {
    STREAM_TAIL.min(tol / (spec.k1() + spec.k2()) as f64)
}

fn check(spec: &ModelSpec, t: f64, tol: f64) -> Result<()> {
    spec.require(&[Variant::Constant], "the constant-rate closed form")?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::domain(format!("time must be finite and nonnegative, got {t}")));
    }
    if !(tol > 0.0) {
        return Err(Error::domain("tolerance must be positive"));
    }
    Ok(())
}

/// Law of `S+`, the total size of all births after time 0.
pub fn birth_increment_law(spec: &ModelSpec, t: f64, tol: f64) -> Result<LatticeLaw> {
    check(spec, t, tol)?;
    Ok(stream_law(spec.lambda(), t, per_stream_tail(spec, tol)))
}

/// Law of `S-`, the total size of all deaths.
pub fn death_law(spec: &ModelSpec, t: f64, tol: f64) -> Result<LatticeLaw> {
    check(spec, t, tol)?;
    Ok(stream_law(spec.mu(), t, per_stream_tail(spec, tol)))
}

/// Law of `N*(t) = 1 + S+ - S-`.
pub fn population_law(spec: &ModelSpec, t: f64, tol: f64) -> Result<LatticeLaw> {
    let plus = birth_increment_law(spec, t, tol)?;
    let minus = death_law(spec, t, tol)?;
    Ok(plus.convolve(&minus.reflect(1)))
}

/// `q*(n, t)`.
pub fn constant_pmf(spec: &ModelSpec, n: State, t: f64, tol: f64) -> Result<f64> {
    Ok(population_law(spec, t, tol)?.prob(n))
}

/// The whole pmf of `N*(t)` in the same form as the ODE solver output.
pub fn constant_pmf_vector(spec: &ModelSpec, t: f64, tol: f64) -> Result<TruncatedPmf> {
    let law = population_law(spec, t, tol)?;
    Ok(TruncatedPmf { t, offset: law.offset, probs: law.weights, deficit: law.tail_bound })
}

/// `Pr{B*(t) = b}`; births count the progenitor, so `b >= 1`.
pub fn marginal_births(spec: &ModelSpec, b: State, t: f64, tol: f64) -> Result<f64> {
    Ok(birth_increment_law(spec, t, tol)?.prob(b - 1))
}

/// `Pr{D*(t) = d}`.
pub fn marginal_deaths(spec: &ModelSpec, d: State, t: f64, tol: f64) -> Result<f64> {
    Ok(death_law(spec, t, tol)?.prob(d))
}

/// `Pr{D*(t) = d, B*(t) = b, N*(t) = n}`, zero off the plane `b - d = n`.
pub fn constant_joint_pmf(spec: &ModelSpec, d: State, b: State, n: State, t: f64, tol: f64) -> Result<f64> {
    check(spec, t, tol)?;
    if b - d != n || b < 1 || d < 0 {
        return Ok(0.0);
    }
    Ok(marginal_deaths(spec, d, t, tol)? * marginal_births(spec, b, t, tol)?)
}

/// `H*(u, t) = E[u^N*(t)]`. The series has negative powers, so `u = 0` is a
/// pole whenever some death rate is positive.
pub fn pgf_constant(spec: &ModelSpec, u: Complex64, t: f64) -> Result<Complex64> {
    check(spec, t, 1.0)?;
    let has_deaths = spec.mu().iter().any(|&m| m > 0.0);
    if u == Complex64::new(0.0, 0.0) && has_deaths {
        return Err(Error::Singular("H*(u, t) has a pole at u = 0".into()));
    }
    let mut expo = Complex64::new(0.0, 0.0);
    for (i, &l) in spec.lambda().iter().enumerate() {
        expo += l * (u.powi(i as i32 + 1) - 1.0);
    }
    for (j, &m) in spec.mu().iter().enumerate() {
        if m > 0.0 {
            expo += m * (u.powi(-(j as i32 + 1)) - 1.0);
        }
    }
    Ok(u * (expo * t).exp())
}

/// `U*(u, v, w, t) = E[u^D* v^B* w^N*]`.
pub fn joint_pgf_constant(spec: &ModelSpec, u: Complex64, v: Complex64, w: Complex64, t: f64) -> Result<Complex64> {
    check(spec, t, 1.0)?;
    let has_deaths = spec.mu().iter().any(|&m| m > 0.0);
    if w == Complex64::new(0.0, 0.0) && has_deaths {
        return Err(Error::Singular("U*(u, v, w, t) has a pole at w = 0".into()));
    }
    let lambda_total: f64 = spec.lambda().iter().chain(spec.mu()).sum();
    let mut expo = Complex64::new(0.0, 0.0);
    for (i, &l) in spec.lambda().iter().enumerate() {
        expo += l * (v * w).powi(i as i32 + 1);
    }
    for (j, &m) in spec.mu().iter().enumerate() {
        if m > 0.0 {
            expo += m * (u / w).powi(j as i32 + 1);
        }
    }
    Ok(v * w * ((expo - lambda_total) * t).exp())
}

/// `E[u^N*(t) v^X*(t)]` with `X*(t) = int_0^t N*(s) ds`.
///
/// A jump of size `i` at time `s` adds `i` to `N*(t)` and `i (t - s)` to
/// `X*(t)`, so each Poisson stream contributes
/// `exp(rate * t * (u^i E1(i t ln v) - 1))` with `E1(x) = (e^x - 1) / x`,
/// and the progenitor contributes `u v^t`.
pub fn path_integral_pgf_constant(spec: &ModelSpec, u: f64, v: f64, t: f64) -> Result<f64> {
    check(spec, t, 1.0)?;
    if v == 1.0 {
        return Err(Error::Singular("v = 1 is excluded; use pgf_constant for the limit".into()));
    }
    if !(u > 0.0) || !(v > 0.0 && v < 1.0) {
        return Err(Error::domain(format!("need u > 0 and 0 < v < 1, got u={u}, v={v}")));
    }
    let lv = v.ln();
    let mut expo = 0.0;
    for (i, &l) in spec.lambda().iter().enumerate() {
        let s = (i + 1) as f64;
        expo += l * (u.powf(s) * e1(s * t * lv) - 1.0);
    }
    for (j, &m) in spec.mu().iter().enumerate() {
        let s = (j + 1) as f64;
        expo += m * (u.powf(-s) * e1(-s * t * lv) - 1.0);
    }
    Ok(u * v.powf(t) * (expo * t).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Lattice;
    use proptest::prelude::*;
    use statrs::function::gamma::ln_gamma;

    fn desk() -> ModelSpec {
        ModelSpec::constant(vec![1.0, 0.5], vec![0.5, 0.25]).unwrap()
    }

    fn pois(k: u64, m: f64) -> f64 {
        if m == 0.0 {
            return if k == 0 { 1.0 } else { 0.0 };
        }
        (-m + k as f64 * m.ln() - ln_gamma(k as f64 + 1.0)).exp()
    }

    /// Brute-force sum over all tuples `(x_1..x_k1, y_1..y_k2)` with
    /// `sum x_i + sum y_j <= l_max`.
    fn enumerate(spec: &ModelSpec, n: State, t: f64, l_max: u64) -> f64 {
        let rates: Vec<(f64, i64)> = spec
            .lambda()
            .iter()
            .enumerate()
            .map(|(i, &r)| (r, i as i64 + 1))
            .chain(spec.mu().iter().enumerate().map(|(j, &r)| (r, -(j as i64 + 1))))
            .collect();
        fn rec(rates: &[(f64, i64)], t: f64, budget: u64, shift: i64, target: i64, acc: f64) -> f64 {
            if rates.is_empty() {
                return if shift == target { acc } else { 0.0 };
            }
            let (r, s) = rates[0];
            (0..=budget)
                .map(|x| rec(&rates[1..], t, budget - x, shift + s * x as i64, target, acc * pois(x, r * t)))
                .sum()
        }
        rec(&rates, t, l_max, 1, n, 1.0)
    }

    #[test]
    fn initial_condition() {
        let s = desk();
        assert_eq!(constant_pmf(&s, 1, 0.0, 1e-12).unwrap(), 1.0);
        assert_eq!(constant_pmf(&s, 0, 0.0, 1e-12).unwrap(), 0.0);
        assert!(constant_pmf(&s, 0, -1.0, 1e-12).is_err());
    }

    #[test]
    fn symmetric_walk_value() {
        let s = ModelSpec::constant(vec![1.0], vec![1.0]).unwrap();
        let series: f64 = (0..40).map(|x| 1.0 / (1..=x).map(f64::from).product::<f64>().powi(2)).sum();
        let want = (-2.0f64).exp() * series;
        assert!((want - 0.308_508_3).abs() < 1e-7);
        assert!((constant_pmf(&s, 1, 1.0, 1e-12).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn normalization_and_tail() {
        let law = population_law(&desk(), 2.0, 1e-12).unwrap();
        let total: f64 = law.weights.iter().sum();
        assert!((total + law.tail_bound - 1.0).abs() < 1e-14);
        assert!(law.offset < 0);
    }

    #[test]
    fn enumeration_oracle() {
        for &t in &[0.3, 1.0] {
            for s in [desk(), ModelSpec::constant(vec![0.7, 0.2, 0.1], vec![0.9]).unwrap()] {
                for n in -4..=6 {
                    let want = enumerate(&s, n, t, 30);
                    let got = constant_pmf(&s, n, t, 1e-12).unwrap();
                    assert!((got - want).abs() < 1e-10, "n={n} t={t}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn joint_and_marginals() {
        let s = desk();
        let t = 0.8;
        let lt: f64 = 2.25 * t;
        assert!((constant_joint_pmf(&s, 0, 1, 1, t, 1e-12).unwrap() - (-lt).exp()).abs() < 1e-15);
        assert_eq!(constant_joint_pmf(&s, 1, 3, 1, t, 1e-12).unwrap(), 0.0);
        assert_eq!(marginal_births(&s, 0, t, 1e-12).unwrap(), 0.0);
        for n in -3..5 {
            let sum: f64 = (0..60).map(|d| constant_joint_pmf(&s, d, n + d, n, t, 1e-12).unwrap()).sum();
            assert!((sum - constant_pmf(&s, n, t, 1e-12).unwrap()).abs() < 2e-12);
        }
        let single = ModelSpec::constant(vec![1.3], vec![0.4]).unwrap();
        for b in 1..10 {
            let k = (b - 1) as u64;
            assert!((marginal_births(&single, b, t, 1e-12).unwrap() - pois(k, 1.3 * t)).abs() < 1e-14);
        }
    }

    #[test]
    fn pgf_identities() {
        let s = desk();
        let one = Complex64::new(1.0, 0.0);
        assert!((pgf_constant(&s, one, 1.7).unwrap() - 1.0).norm() < 1e-15);
        assert!(pgf_constant(&s, Complex64::new(0.0, 0.0), 1.0).is_err());
        let h = 1e-5;
        let d = (pgf_constant(&s, Complex64::new(1.0 + h, 0.0), 1.0).unwrap()
            - pgf_constant(&s, Complex64::new(1.0 - h, 0.0), 1.0).unwrap())
            / (2.0 * h);
        let eta = 1.0 + 2.0 * 0.5 - 0.5 - 2.0 * 0.25;
        assert!((d.re - (1.0 + eta)).abs() < 1e-8);
        let u = joint_pgf_constant(&s, one, one, one, 2.0).unwrap();
        assert!((u - 1.0).norm() < 1e-15);
    }

    #[test]
    fn pgf_coefficients_match_pmf() {
        // Laurent coefficients by the discrete Cauchy integral on |u| = 1.
        let s = desk();
        let m = 512;
        let values: Vec<Complex64> = (0..m)
            .map(|k| {
                let th = 2.0 * std::f64::consts::PI * k as f64 / m as f64;
                pgf_constant(&s, Complex64::from_polar(1.0, th), 1.0).unwrap()
            })
            .collect();
        for n in -5..=10i64 {
            let c: Complex64 = values
                .iter()
                .enumerate()
                .map(|(k, h)| {
                    let th = 2.0 * std::f64::consts::PI * k as f64 / m as f64;
                    h * Complex64::from_polar(1.0, -(n as f64) * th)
                })
                .sum::<Complex64>()
                / m as f64;
            assert!((c.re - constant_pmf(&s, n, 1.0, 1e-13).unwrap()).abs() < 1e-10, "n={n}");
        }
    }

    #[test]
    fn path_integral_pgf_limits() {
        let s = desk();
        assert!(matches!(path_integral_pgf_constant(&s, 0.5, 1.0, 1.0), Err(Error::Singular(_))));
        let t = 1.3;
        for &u in &[0.3, 0.8, 1.0] {
            let near = path_integral_pgf_constant(&s, u, 1.0 - 1e-9, t).unwrap();
            let h = pgf_constant(&s, Complex64::new(u, 0.0), t).unwrap().re;
            assert!((near - h).abs() < 1e-6);
        }
        // d ln G / d ln v at u = 1, v -> 1 is E X*(t).
        let (v1, v2) = (1.0 - 1e-4, 1.0 - 2e-4);
        let g1 = path_integral_pgf_constant(&s, 1.0, v1, t).unwrap().ln();
        let g2 = path_integral_pgf_constant(&s, 1.0, v2, t).unwrap().ln();
        let slope = (g1 - g2) / (v1.ln() - v2.ln());
        let eta = 1.0;
        let want = t + eta * t * t / 2.0;
        // One-sided difference: the error is of order Var(X) * |ln v|.
        assert!((slope - want).abs() < 5e-3, "{slope} vs {want}");
    }

    #[test]
    fn only_constant_variant() {
        let lin = ModelSpec::linear(vec![1.0], vec![1.0]).unwrap();
        assert!(matches!(constant_pmf(&lin, 1, 1.0, 1e-12), Err(Error::Unsupported(_))));
        let ints = desk().with_lattice(Lattice::Integers).unwrap();
        assert!(constant_pmf(&ints, 1, 1.0, 1e-12).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn joint_factorizes(l1 in 0.05f64..1.5, l2 in 0.0f64..1.0, m1 in 0.05f64..1.5, t in 0.1f64..2.0,
                            d in 0i64..6, b in 1i64..8) {
            let s = ModelSpec::constant(vec![l1, l2], vec![m1]).unwrap();
            let joint = constant_joint_pmf(&s, d, b, b - d, t, 1e-12).unwrap();
            let prod = marginal_deaths(&s, d, t, 1e-12).unwrap() * marginal_births(&s, b, t, 1e-12).unwrap();
            prop_assert!((joint - prod).abs() <= 1e-14);
        }

        #[test]
        fn pmf_mean_is_one_plus_eta_t(l1 in 0.05f64..1.5, l2 in 0.0f64..1.0, m1 in 0.05f64..1.5,
                                      m2 in 0.0f64..1.0, t in 0.1f64..2.0) {
            let s = ModelSpec::constant(vec![l1, l2], vec![m1, m2]).unwrap();
            let eta = s.derived_constants().unwrap().eta;
            let law = population_law(&s, t, 1e-12).unwrap();
            prop_assert!((law.mean() - (1.0 + eta * t)).abs() < 1e-8);
        }
    }
}
