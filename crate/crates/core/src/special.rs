//! Cancellation-free helper functions and Poisson weights.

use statrs::function::gamma::ln_gamma;

/// Below this magnitude the helper functions switch to their Taylor series.
const SERIES_RADIUS: f64 = 0.5;
const SERIES_TERMS: usize = 30;

fn series(x: f64, coeff: impl Fn(usize) -> f64, first: usize) -> f64 {
    // sum_{k >= first} coeff(k) x^(k - first) / k!
    let mut fact = (1..=first).map(|k| k as f64).product::<f64>();
    let mut pow = 1.0;
    let mut sum = 0.0;
    for k in first..first + SERIES_TERMS {
        if k > first {
            fact *= k as f64;
            pow *= x;
        }
        sum += coeff(k) * pow / fact;
    }
    sum
}

/// `(e^x - 1) / x`, equal to 1 at 0.
pub fn e1(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.exp_m1() / x
    }
}

/// `(e^x - 1 - x) / x^2`, equal to 1/2 at 0.
pub fn e2(x: f64) -> f64 {
    if x.abs() < SERIES_RADIUS {
        series(x, |_| 1.0, 2)
    } else {
        (x.exp_m1() - x) / (x * x)
    }
}

/// `(x e^x - e^x + 1) / x^2`, equal to 1/2 at 0.
pub fn f(x: f64) -> f64 {
    if x.abs() < SERIES_RADIUS {
        series(x, |k| (k - 1) as f64, 2)
    } else {
        (x * x.exp() - x.exp_m1()) / (x * x)
    }
}

/// `(e^{2x} - 1 - 2x e^x) / (2 x^3)`, equal to 1/6 at 0.
pub fn g(x: f64) -> f64 {
    if x.abs() < SERIES_RADIUS {
        series(x, |k| (2f64.powi(k as i32) - 2.0 * k as f64) / 2.0, 3)
    } else {
        ((2.0 * x).exp_m1() - 2.0 * x * x.exp()) / (2.0 * x * x * x)
    }
}

/// `ln Gamma(n + 1) - (n + 1/2) ln n + n - ln(2 pi) / 2`.
fn stirling_error(n: f64) -> f64 {
    if n < 16.0 {
        return ln_gamma(n + 1.0) - (n + 0.5) * n.ln() + n - 0.5 * (2.0 * std::f64::consts::PI).ln();
    }
    let n2 = n * n;
    (1.0 / 12.0 - (1.0 / 360.0 - (1.0 / 1260.0 - 1.0 / (1680.0 * n2)) / n2) / n2) / n
}

/// `x ln(x / m) + m - x` without cancellation when `x` is close to `m`.
fn deviance(x: f64, m: f64) -> f64 {
    if (x - m).abs() < 0.1 * (x + m) {
        let v = (x - m) / (x + m);
        let mut s = (x - m) * v;
        let mut ej = 2.0 * x * v;
        let v2 = v * v;
        for j in 1..1000 {
            ej *= v2;
            let next = s + ej / (2 * j + 1) as f64;
            if next == s {
                return next;
            }
            s = next;
        }
        s
    } else {
        x * (x / m).ln() + m - x
    }
}

/// Poisson probability of `k` for the given mean, accurate to a few ulps
/// even for large means.
pub fn poisson_point(k: usize, mean: f64) -> f64 {
    if mean == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if k == 0 {
        return (-mean).exp();
    }
    let x = k as f64;
    (-stirling_error(x) - deviance(x, mean)).exp() / (2.0 * std::f64::consts::PI * x).sqrt()
}

/// Poisson probabilities on a window `[lo, lo + weights.len())` holding all
/// but at most `tail` of the mass. Returns `(lo, weights, tail_bound)` where
/// `tail_bound` is a rigorous upper bound on the mass left out.
pub fn poisson_window(mean: f64, tail: f64) -> (usize, Vec<f64>, f64) {
    assert!(mean >= 0.0 && mean.is_finite(), "invalid Poisson mean {mean}");
    if mean == 0.0 {
        return (0, vec![1.0], 0.0);
    }
    let half = tail / 2.0;
    let mode = mean.floor() as usize;
    let pm = poisson_point(mode, mean);

    let mut upper = vec![pm];
    let mut k = mode;
    let upper_bound = loop {
        let last = *upper.last().unwrap();
        let ratio = mean / (k + 1) as f64;
        if ratio < 1.0 {
            let bound = last * ratio / (1.0 - ratio);
            if bound <= half {
                break bound;
            }
        }
        upper.push(last * ratio);
        k += 1;
    };

    let mut lower = Vec::new();
    let mut k = mode;
    let mut last = pm;
    let lower_bound = loop {
        if k == 0 {
            break 0.0;
        }
        let ratio = k as f64 / mean;
        let bound = last * ratio / (1.0 - ratio).max(f64::MIN_POSITIVE);
        if ratio < 1.0 && bound <= half {
            break bound;
        }
        last *= ratio;
        lower.push(last);
        k -= 1;
    };
    let lo = mode - lower.len();
    lower.reverse();
    lower.extend(upper);
    (lo, lower, upper_bound + lower_bound)
}
