//! Ultimate and transient extinction of the linear process and Laplace
//! transforms of hitting-time functionals.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kolmogorov::{point_mass, probability_of_state, SolveOptions};
use crate::model::{Lattice, ModelSpec, State, Variant};
use crate::roots::{eval, polynomial_roots};

/// Imaginary parts up to this size are treated as zero.
pub const REAL_ROOT_TOL: f64 = 1e-8;
/// Roots closer than this are treated as repeated.
pub const DISTINCT_GAP: f64 = 1e-7;
pub const ROOT_TOL: f64 = 1e-12;
/// Change in the Laplace value between truncation doublings that counts as
/// converged.
pub const LAPLACE_CHANGE_TOL: f64 = 1e-8;
/// Settling tolerance for the transient `p(0, t)` solve.
pub const TRANSIENT_CHANGE_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExtinctionAnalysis {
    /// Ascending coefficients of `psi(u) = u^{k2 - 1} phi(u)`.
    pub psi_coeffs: Vec<f64>,
    pub roots: Vec<Complex64>,
    /// Present only when the roots are pairwise distinct.
    pub residues: Option<Vec<Complex64>>,
    pub epsilon: f64,
    pub distinct: bool,
}

/// Coefficients of `psi(u) = sum_i lambda_i (u^{i + k2} - u^{k2}) + sum_j mu_j (u^{k2 - j} - u^{k2})`.
pub fn psi_coefficients(lambda: &[f64], mu: &[f64]) -> Vec<f64> {
    let (k1, k2) = (lambda.len(), mu.len());
    let mut c = vec![0.0; k1 + k2 + 1];
    for (i, &l) in lambda.iter().enumerate() {
        c[i + 1 + k2] += l;
        c[k2] -= l;
    }
    for (j, &m) in mu.iter().enumerate() {
        c[k2 - (j + 1)] += m;
        c[k2] -= m;
    }
    c
}

fn min_gap(roots: &[Complex64]) -> f64 {
    let mut gap = f64::INFINITY;
    for (i, a) in roots.iter().enumerate() {
        for b in &roots[i + 1..] {
            gap = gap.min((a - b).norm());
        }
    }
    gap
}

/// Roots of `psi`, residues of `1 / phi` and the ultimate extinction
/// probability from one individual.
pub fn analyze(spec: &ModelSpec) -> Result<ExtinctionAnalysis> {
    spec.require(&[Variant::Linear], "extinction analysis")?;
    let (lambda, mu) = (spec.lambda(), spec.mu());
    let lead = *lambda.last().unwrap();
    if lead <= 0.0 {
        return Err(Error::domain("psi is degenerate: the largest birth size has rate 0"));
    }
    let psi_coeffs = psi_coefficients(lambda, mu);
    let roots = polynomial_roots(&psi_coeffs, ROOT_TOL)?;
    let distinct = min_gap(&roots) > DISTINCT_GAP;
    let k2 = mu.len() as i32;
    let residues = distinct.then(|| {
        roots
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let denom: Complex64 = roots
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, &s)| r - s)
                    .product();
                r.powi(k2 - 1) / (lead * denom)
            })
            .collect()
    });
    let epsilon = roots
        .iter()
        .filter(|r| r.im.abs() <= REAL_ROOT_TOL && r.re > 0.0)
        .map(|r| r.re)
        .fold(1.0, f64::min);
    Ok(ExtinctionAnalysis { psi_coeffs, roots, residues, epsilon, distinct })
}

impl ExtinctionAnalysis {
    /// `psi(u)`.
    pub fn psi(&self, u: Complex64) -> Complex64 {
        eval(&self.psi_coeffs, u)
    }

    /// `g(u) = prod (u - r_i)^{-c_i}` on the principal branch.
    pub fn g_function(&self, u: Complex64) -> Result<Complex64> {
        let residues = self
            .residues
            .as_ref()
            .ok_or_else(|| Error::Dependency("g needs pairwise distinct roots".into()))?;
        let mut log = Complex64::new(0.0, 0.0);
        for (r, c) in self.roots.iter().zip(residues) {
            let d = u - r;
            if d.norm() <= DISTINCT_GAP * r.norm().max(1.0) {
                return Err(Error::Singular(format!("g evaluated at the root {r}")));
            }
            log -= c * d.ln();
        }
        Ok(log.exp())
    }
}

/// `E[exp(-theta * int_0^{Z_k} g(N(s)) ds)]` where `Z_k` is the first
/// hitting time of 0 from `k`. Paths that never hit 0 contribute 0, so at
/// `theta = 0` this is the probability of hitting 0.
///
/// The backward system is truncated above `K`, where `W = 0`, and `K`
/// doubles from `max(2 (k + k1), 32)` up to `k_max` until the value changes
/// by less than [`LAPLACE_CHANGE_TOL`].
pub fn hitting_time_laplace<G>(spec: &ModelSpec, k: State, theta: f64, g_weight: G, k_max: usize) -> Result<f64>
where
    G: Fn(State) -> f64,
{
    if spec.has_immigration_at_zero() {
        return Err(Error::domain("hitting times of 0 need a model without births at 0"));
    }
    if spec.lattice() == Lattice::Integers {
        return Err(Error::Unsupported("hitting times of 0 need the nonnegative lattice".into()));
    }
    if !(theta >= 0.0) || !theta.is_finite() {
        return Err(Error::domain("theta must be finite and nonnegative"));
    }
    if k < 1 {
        return Err(Error::domain("the starting state must be at least 1"));
    }
    let k1 = spec.k1();
    let ku = k as usize;
    if k_max < ku + k1 {
        return Err(Error::domain(format!("k_max must be at least k + k1 = {}", ku + k1)));
    }
    if let Some(cap) = spec.capacity() {
        return solve_laplace(spec, ku, theta, &g_weight, cap as usize);
    }
    let mut size = (2 * (ku + k1)).max(32).min(k_max);
    let mut previous = solve_laplace(spec, ku, theta, &g_weight, size)?;
    while size < k_max {
        size = (2 * size).min(k_max);
        let value = solve_laplace(spec, ku, theta, &g_weight, size)?;
        if (value - previous).abs() < LAPLACE_CHANGE_TOL {
            return Ok(value);
        }
        previous = value;
    }
    Err(Error::Truncation {
        message: "Laplace transform did not settle before k_max".into(),
        states: size,
        deficit: f64::NAN,
    })
}

/// Solve the truncated backward system on states `1..=size` and return `W_k`.
fn solve_laplace<G: Fn(State) -> f64>(spec: &ModelSpec, k: usize, theta: f64, g_weight: &G, size: usize) -> Result<f64> {
    let (k1, k2) = (spec.k1(), spec.k2());
    let width = k1 + k2 + 1;
    // band[r][k2 + c - r] holds A[r][c] for c in r - k2 ..= r + k1.
    let mut band = vec![vec![0.0; width]; size];
    let mut rhs = vec![0.0; size];
    for r in 0..size {
        let n = (r + 1) as State;
        let weight = g_weight(n);
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(Error::domain(format!("g({n}) = {weight} must be positive and finite")));
        }
        let mut exit = 0.0;
        for i in 1..=k1 {
            let rate = spec.birth_rate_unchecked(n, i);
            exit += rate;
            if r + i < size {
                band[r][k2 + i] -= rate;
            }
        }
        for j in 1..=k2 {
            let rate = spec.death_rate_unchecked(n, j);
            exit += rate;
            if j == r + 1 {
                rhs[r] += rate;
            } else if j <= r {
                band[r][k2 - j] -= rate;
            }
        }
        let diag = theta * weight + exit;
        if diag > 0.0 {
            band[r][k2] += diag;
        } else {
            // An absorbing state other than 0: 0 is never reached from it.
            band[r] = vec![0.0; width];
            band[r][k2] = 1.0;
            rhs[r] = 0.0;
        }
    }
    banded_solve(&mut band, &mut rhs, k2, k1)?;
    Ok(rhs[k - 1])
}

/// Gaussian elimination without pivoting on a band matrix with `lower`
/// sub- and `upper` super-diagonals. The backward systems are diagonally
/// dominant, so pivoting is unnecessary.
fn banded_solve(band: &mut [Vec<f64>], rhs: &mut [f64], lower: usize, upper: usize) -> Result<()> {
    let n = rhs.len();
    let at = |r: usize, c: usize| lower + c - r;
    // Fill-in stays within the upper bandwidth because no rows are swapped.
    for p in 0..n {
        let pivot = band[p][at(p, p)];
        if pivot.abs() < 1e-300 {
            return Err(Error::Singular("zero pivot in the backward system".into()));
        }
        for r in p + 1..(p + lower + 1).min(n) {
            let factor = band[r][at(r, p)] / pivot;
            if factor == 0.0 {
                continue;
            }
            for c in p..(p + upper + 1).min(n) {
                let v = band[p][at(p, c)];
                band[r][at(r, c)] -= factor * v;
            }
            rhs[r] -= factor * rhs[p];
        }
    }
    for p in (0..n).rev() {
        let mut s = rhs[p];
        for c in p + 1..(p + upper + 1).min(n) {
            s -= band[p][at(p, c)] * rhs[c];
        }
        rhs[p] = s / band[p][at(p, p)];
    }
    Ok(())
}

/// `p(0, t)` of the simple linear birth-death process with rates `lambda`
/// and `mu`, started from one individual.
pub fn lbdp_extinction(lambda: f64, mu: f64, t: f64) -> f64 {
    let r = lambda - mu;
    if r == 0.0 {
        return lambda * t / (1.0 + lambda * t);
    }
    let e = (r * t).exp_m1();
    mu * e / (lambda * e + r)
}

/// `p(0, t)` from one individual, from the forward equations. For single
/// births and deaths the closed form is checked against it to 1e-6.
pub fn transient_extinction(spec: &ModelSpec, t: f64, opts: &SolveOptions) -> Result<f64> {
    spec.require(&[Variant::Linear], "transient_extinction")?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::domain("time must be finite and nonnegative"));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let value = probability_of_state(spec, &point_mass(1), 0, &[t], TRANSIENT_CHANGE_TOL, opts)?[0];
    if spec.k1() == 1 && spec.k2() == 1 {
        let exact = lbdp_extinction(spec.lambda()[0], spec.mu()[0], t);
        if (exact - value).abs() > 1e-6 {
            return Err(Error::Numerical(format!(
                "forward solve gives p(0, {t}) = {value}, closed form {exact}"
            )));
        }
    }
    Ok(value)
}
