//! Estimation of the aggregate rate `Lambda = sum lambda_i + sum mu_j` of
//! the linear process from inter-event times.
//!
//! In state `n` the sojourn is exponential with rate `Lambda n`, so
//! `2 Lambda sum n tau` is chi-square with `2E` degrees of freedom given `E`
//! observed transitions.

use serde::{Deserialize, Serialize};

use crate::chisq;
use crate::error::{Error, Result};
use crate::model::State;
use crate::simulate::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub state_before: State,
    pub sojourn: f64,
}

impl TransitionRecord {
    pub fn new(state_before: State, sojourn: f64) -> Result<Self> {
        let r = TransitionRecord { state_before, sojourn };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_before < 1 {
            return Err(Error::domain(format!(
                "state_before must be at least 1, got {}",
                self.state_before
            )));
        }
        if !(self.sojourn > 0.0) || !self.sojourn.is_finite() {
            return Err(Error::domain(format!("sojourn must be positive and finite, got {}", self.sojourn)));
        }
        Ok(())
    }
}

/// One record per jump. The interval after the last jump is censored and
/// left out.
pub fn extract_records(traj: &Trajectory) -> Vec<TransitionRecord> {
    let mut out = Vec::with_capacity(traj.events.len());
    let (mut prev, mut n) = (0.0, traj.initial_state);
    for (&t, e) in traj.jump_times.iter().zip(&traj.events) {
        out.push(TransitionRecord { state_before: n, sojourn: t - prev });
        prev = t;
        n += e.delta();
    }
    out
}

fn checked(records: &[TransitionRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::domain("at least one transition record is required"));
    }
    records.iter().try_for_each(TransitionRecord::validate)
}

/// `sum n tau`, the exposure, with compensated summation.
pub fn exposure(records: &[TransitionRecord]) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for r in records {
        let x = r.state_before as f64 * r.sojourn;
        let t = sum + x;
        comp += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    sum + comp
}

/// `E / sum n tau`.
pub fn mle_lambda(records: &[TransitionRecord]) -> Result<f64> {
    checked(records)?;
    Ok(records.len() as f64 / exposure(records))
}

/// `sum n tau / E`, unbiased for `1 / Lambda`.
pub fn sufficient_statistic(records: &[TransitionRecord]) -> Result<f64> {
    checked(records)?;
    Ok(exposure(records) / records.len() as f64)
}

/// Exact two-sided `1 - alpha` interval for `Lambda`.
pub fn confidence_interval(records: &[TransitionRecord], alpha: f64) -> Result<(f64, f64)> {
    checked(records)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let dof = 2.0 * records.len() as f64;
    let s = 2.0 * exposure(records);
    Ok((chisq::quantile(dof, alpha / 2.0)? / s, chisq::quantile(dof, 1.0 - alpha / 2.0)? / s))
}

/// Two-sided p-value of the pivot `2 Lambda0 sum n tau` against
/// chi-square with `2E` degrees of freedom.
pub fn chisq_gof(records: &[TransitionRecord], lambda0: f64) -> Result<f64> {
    checked(records)?;
    if !(lambda0 > 0.0) || !lambda0.is_finite() {
        return Err(Error::domain("the hypothesised rate must be positive and finite"));
    }
    let dof = 2.0 * records.len() as f64;
    let q = 2.0 * lambda0 * exposure(records);
    let tail = chisq::cdf(dof, q).min(chisq::sf(dof, q));
    Ok((2.0 * tail).min(1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EstimateReport {
    pub lambda_hat: f64,
    pub lambda_tilde: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_events: usize,
}

pub fn estimate_report(records: &[TransitionRecord], alpha: f64) -> Result<EstimateReport> {
    let (ci_low, ci_high) = confidence_interval(records, alpha)?;
    Ok(EstimateReport {
        lambda_hat: mle_lambda(records)?,
        lambda_tilde: sufficient_statistic(records)?,
        ci_low,
        ci_high,
        n_events: records.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EventDescriptor, ModelSpec};
    use crate::simulate::{functionals, replicate, simulate_jumps, Estimate};
    use proptest::prelude::*;

    fn rec(n: State, s: f64) -> TransitionRecord {
        TransitionRecord::new(n, s).unwrap()
    }

    #[test]
    fn direct_examples() {
        assert_eq!(mle_lambda(&[rec(1, 1.0)]).unwrap(), 1.0);
        assert_eq!(sufficient_statistic(&[rec(1, 1.0)]).unwrap(), 1.0);
        let two = [rec(2, 0.5), rec(3, 0.25)];
        assert!((mle_lambda(&two).unwrap() - 2.0 / 1.75).abs() < 1e-15);
        assert!((sufficient_statistic(&two).unwrap() - 0.875).abs() < 1e-15);
        assert!(mle_lambda(&[]).is_err());
        assert!(TransitionRecord::new(0, 1.0).is_err());
        assert!(TransitionRecord::new(1, 0.0).is_err());
    }

    #[test]
    fn single_event_interval() {
        let (lo, hi) = confidence_interval(&[rec(1, 1.0)], 0.05).unwrap();
        let q = |p: f64| -2.0 * (-p).ln_1p() / 2.0;
        assert!((lo - q(0.025)).abs() < 1e-10 && (hi - q(0.975)).abs() < 1e-10);
        assert!((lo - 0.025_317_807_984).abs() < 1e-11 && (hi - 3.688_879_454_114).abs() < 1e-11);
        assert!(confidence_interval(&[rec(1, 1.0)], 1.0).is_err());
    }

    #[test]
    fn records_replay_jumps() {
        let traj = Trajectory {
            initial_state: 2,
            jump_times: vec![0.5, 0.75],
            events: vec![EventDescriptor::birth(2), EventDescriptor::death(1)],
            horizon: 1.0,
            seed: 0,
        };
        assert_eq!(extract_records(&traj), vec![rec(2, 0.5), rec(4, 0.25)]);
        let empty = Trajectory { jump_times: vec![], events: vec![], ..traj };
        assert!(extract_records(&empty).is_empty());
    }

    #[test]
    fn exposure_equals_path_integral() {
        let spec = ModelSpec::linear(vec![1.0, 0.5], vec![0.5, 0.25]).unwrap();
        let traj = simulate_jumps(&spec, 3, 2000, 5).unwrap();
        let records = extract_records(&traj);
        let pf = functionals(&traj, |n| n as f64, &[traj.horizon]).unwrap();
        let x = pf.path_integral[0];
        assert!((exposure(&records) - x).abs() <= 1e-12 * x);
    }

    #[test]
    fn gof_extremes() {
        let spec = ModelSpec::linear(vec![1.0, 0.5], vec![0.5]).unwrap();
        let records = extract_records(&simulate_jumps(&spec, 20, 2000, 1).unwrap());
        let s = exposure(&records);
        // Pivot at its median.
        let median = chisq::quantile(2.0 * records.len() as f64, 0.5).unwrap() / (2.0 * s);
        assert!(chisq_gof(&records, median).unwrap() > 1.0 - 1e-8);
        assert!(chisq_gof(&records, 20.0).unwrap() < 1e-6);
    }

    #[test]
    fn large_sample_mle_inside_interval() {
        let spec = ModelSpec::linear(vec![1.0, 0.5], vec![0.5, 0.25]).unwrap();
        let records = extract_records(&simulate_jumps(&spec, 20, 10_000, 3).unwrap());
        let (lo, hi) = confidence_interval(&records, 0.01).unwrap();
        assert!(lo < 2.25 && 2.25 < hi, "[{lo}, {hi}]");
    }

    #[test]
    fn sufficient_statistic_unbiased() {
        let spec = ModelSpec::linear(vec![1.0, 0.5], vec![0.5]).unwrap();
        let values = replicate(10_000, 17, |_, seed| {
            sufficient_statistic(&extract_records(&simulate_jumps(&spec, 5, 20, seed).unwrap())).unwrap()
        });
        let e = Estimate::from_samples(&values);
        assert!((e.mean - 0.5).abs() < 3.0 * e.std_error, "{} ± {}", e.mean, e.std_error);
    }

    proptest! {
        #[test]
        fn reciprocal_and_scale(data in prop::collection::vec((1i64..50, 0.001f64..10.0), 1..60), c in 0.01f64..100.0) {
            let records: Vec<_> = data.iter().map(|&(n, s)| rec(n, s)).collect();
            let hat = mle_lambda(&records).unwrap();
            let tilde = sufficient_statistic(&records).unwrap();
            prop_assert!((hat * tilde - 1.0).abs() <= 4.0 * f64::EPSILON);
            let scaled: Vec<_> = data.iter().map(|&(n, s)| rec(n, s * c)).collect();
            let hs = mle_lambda(&scaled).unwrap();
            prop_assert!((hs * c / hat - 1.0).abs() <= 1e-13);
        }
    }
}
