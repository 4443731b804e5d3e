//! Exact simulation of sample paths and Monte Carlo aggregation.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{EventDescriptor, EventKind, ModelSpec, State};
use crate::rng::{generator, stream_seed};

/// Default cap on the number of jumps of a single run.
pub const DEFAULT_MAX_JUMPS: u64 = 10_000_000;

/// One realized sample path on `[0, horizon]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub initial_state: State,
    pub jump_times: Vec<f64>,
    pub events: Vec<EventDescriptor>,
    pub horizon: f64,
    pub seed: u64,
}

impl Trajectory {
    /// State after each jump, in order.
    pub fn states(&self) -> impl Iterator<Item = State> + '_ {
        self.events.iter().scan(self.initial_state, |n, e| {
            *n += e.delta();
            Some(*n)
        })
    }

    pub fn final_state(&self) -> State {
        self.initial_state + self.events.iter().map(|e| e.delta()).sum::<State>()
    }

    /// State at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> State {
        let k = self.jump_times.partition_point(|&s| s <= t);
        self.initial_state + self.events[..k].iter().map(|e| e.delta()).sum::<State>()
    }
}

fn pick_event(spec: &ModelSpec, n: State, total: f64, u: f64) -> EventDescriptor {
    let target = u * total;
    let mut acc = 0.0;
    let mut last = None;
    for i in 1..=spec.k1() {
        let r = spec.birth_rate_unchecked(n, i);
        if r > 0.0 {
            acc += r;
            last = Some(EventDescriptor::birth(i as u32));
            if target < acc {
                return last.unwrap();
            }
        }
    }
    for j in 1..=spec.k2() {
        let r = spec.death_rate_unchecked(n, j);
        if r > 0.0 {
            acc += r;
            last = Some(EventDescriptor::death(j as u32));
            if target < acc {
                return last.unwrap();
            }
        }
    }
    last.expect("positive exit rate implies an event")
}

struct Step {
    dt: f64,
    event: Option<EventDescriptor>,
}

/// Draw the sojourn in `n` and the event that ends it. `event` is `None` when
/// `n` is absorbing.
fn step<R: Rng>(spec: &ModelSpec, n: State, rng: &mut R) -> Step {
    let total = spec.exit_rate_unchecked(n);
    if total <= 0.0 {
        return Step { dt: f64::INFINITY, event: None };
    }
    let e: f64 = rng.sample(Exp1);
    let dt = e / total;
    let u: f64 = rng.random();
    Step { dt, event: Some(pick_event(spec, n, total, u)) }
}

fn check_start(spec: &ModelSpec, n0: State) -> Result<()> {
    if spec.is_valid_state(n0) {
        Ok(())
    } else {
        Err(Error::domain(format!("initial state {n0} is outside the state space")))
    }
}

/// Simulate on `[0, horizon]` with the default jump cap.
pub fn simulate_trajectory(spec: &ModelSpec, n0: State, horizon: f64, seed: u64) -> Result<Trajectory> {
    simulate_trajectory_capped(spec, n0, horizon, seed, DEFAULT_MAX_JUMPS)
}

pub fn simulate_trajectory_capped(
    spec: &ModelSpec,
    n0: State,
    horizon: f64,
    seed: u64,
    max_jumps: u64,
) -> Result<Trajectory> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::domain(format!("horizon must be positive and finite, got {horizon}")));
    }
    check_start(spec, n0)?;
    let mut rng = generator(seed);
    let mut traj = Trajectory { initial_state: n0, jump_times: Vec::new(), events: Vec::new(), horizon, seed };
    let (mut t, mut n) = (0.0, n0);
    loop {
        let s = step(spec, n, &mut rng);
        let Some(event) = s.event else { break };
        t += s.dt;
        if t > horizon {
            break;
        }
        if traj.events.len() as u64 >= max_jumps {
            return Err(Error::Numerical(format!("more than {max_jumps} jumps before the horizon")));
        }
        traj.jump_times.push(t);
        traj.events.push(event);
        n += event.delta();
    }
    Ok(traj)
}

/// Simulate exactly `jumps` events, or fewer if the chain is absorbed. The
/// horizon is the time of the last jump, so no censored interval remains.
pub fn simulate_jumps(spec: &ModelSpec, n0: State, jumps: u64, seed: u64) -> Result<Trajectory> {
    check_start(spec, n0)?;
    let mut rng = generator(seed);
    let mut traj = Trajectory { initial_state: n0, jump_times: Vec::new(), events: Vec::new(), horizon: 0.0, seed };
    let (mut t, mut n) = (0.0, n0);
    while (traj.events.len() as u64) < jumps {
        let s = step(spec, n, &mut rng);
        let Some(event) = s.event else { break };
        t += s.dt;
        traj.jump_times.push(t);
        traj.events.push(event);
        n += event.delta();
    }
    traj.horizon = t;
    Ok(traj)
}

/// N, B, D and X evaluated at query times.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathFunctionals {
    pub query_times: Vec<f64>,
    pub population: Vec<State>,
    pub cumulative_births: Vec<State>,
    pub cumulative_deaths: Vec<State>,
    pub path_integral: Vec<f64>,
}

/// Evaluate the path functionals. `B` counts the initial individuals, so
/// `N = B - D` at every time. `X(t) = int_0^t g(N(s)) ds` is integrated exactly.
pub fn functionals<G>(traj: &Trajectory, g: G, query_times: &[f64]) -> Result<PathFunctionals>
where
    G: Fn(State) -> f64,
{
    let mut out = PathFunctionals {
        query_times: query_times.to_vec(),
        population: Vec::with_capacity(query_times.len()),
        cumulative_births: Vec::with_capacity(query_times.len()),
        cumulative_deaths: Vec::with_capacity(query_times.len()),
        path_integral: Vec::with_capacity(query_times.len()),
    };
    let mut order: Vec<usize> = (0..query_times.len()).collect();
    for &q in query_times {
        if !(0.0..=traj.horizon).contains(&q) {
            return Err(Error::domain(format!("query time {q} outside [0, {}]", traj.horizon)));
        }
    }
    order.sort_by(|&a, &b| query_times[a].total_cmp(&query_times[b]));
    let mut vals = vec![(0, 0, 0, 0.0); query_times.len()];
    let (mut n, mut b, mut d) = (traj.initial_state, traj.initial_state, 0);
    let (mut x, mut last_t, mut k) = (0.0, 0.0, 0usize);
    for idx in order {
        let q = query_times[idx];
        while k < traj.jump_times.len() && traj.jump_times[k] <= q {
            let tj = traj.jump_times[k];
            x += g(n) * (tj - last_t);
            last_t = tj;
            let e = traj.events[k];
            match e.kind {
                EventKind::Birth => b += e.size as State,
                EventKind::Death => d += e.size as State,
            }
            n += e.delta();
            k += 1;
        }
        x += g(n) * (q - last_t);
        last_t = q;
        vals[idx] = (n, b, d, x);
    }
    for (n, b, d, x) in vals {
        out.population.push(n);
        out.cumulative_births.push(b);
        out.cumulative_deaths.push(d);
        out.path_integral.push(x);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum HittingTime {
    Hit(f64),
    Censored(f64),
}

/// First time the path is at 0, or the horizon if it never gets there.
pub fn hitting_time(traj: &Trajectory) -> HittingTime {
    if traj.initial_state == 0 {
        return HittingTime::Hit(0.0);
    }
    for (t, n) in traj.jump_times.iter().zip(traj.states()) {
        if n == 0 {
            return HittingTime::Hit(*t);
        }
    }
    HittingTime::Censored(traj.horizon)
}

/// `Z_k` and `W_k = int_0^{Z_k} g(N(t)) dt` from one run to absorption.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HittingSample {
    pub z: f64,
    pub w: f64,
    /// The jump cap was hit before absorption; `z` and `w` are partial.
    pub censored: bool,
}

/// Run from `k` until state 0 is reached or `max_jumps` jumps have occurred.
pub fn sample_hitting_functional<G>(spec: &ModelSpec, k: State, g: G, seed: u64, max_jumps: u64) -> Result<HittingSample>
where
    G: Fn(State) -> f64,
{
    check_start(spec, k)?;
    if spec.has_immigration_at_zero() {
        return Err(Error::Unsupported("hitting times need state 0 to be absorbing".into()));
    }
    let mut rng = generator(seed);
    let (mut n, mut z, mut w) = (k, 0.0, 0.0);
    let mut jumps = 0u64;
    while n != 0 {
        if jumps >= max_jumps {
            return Ok(HittingSample { z, w, censored: true });
        }
        let s = step(spec, n, &mut rng);
        let Some(event) = s.event else {
            // Absorbed away from 0: never hits.
            return Ok(HittingSample { z: f64::INFINITY, w: f64::INFINITY, censored: true });
        };
        z += s.dt;
        w += g(n) * s.dt;
        n += event.delta();
        jumps += 1;
    }
    Ok(HittingSample { z, w, censored: false })
}

/// Run `f(index, seed)` for `m` replications with counter-derived seeds.
/// Runs in parallel on the current rayon pool; the output order is the
/// replication order regardless of scheduling.
pub fn replicate<T, F>(m: usize, base_seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, u64) -> T + Sync + Send,
{
    (0..m).into_par_iter().map(|r| f(r, stream_seed(base_seed, r as u64))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Functional {
    N,
    B,
    D,
    X,
}

impl fmt::Display for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Functional::N => "N",
            Functional::B => "B",
            Functional::D => "D",
            Functional::X => "X",
        };
        f.write_str(s)
    }
}

/// Sample mean, variance and standard error of the mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
}

/// Sample covariance with the standard error of the mean of centered
/// products.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CovarianceEstimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let m = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / m;
        let variance = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
        Estimate { mean, variance, std_error: (variance / m).sqrt() }
    }
}

impl CovarianceEstimate {
    pub fn from_samples(xs: &[f64], ys: &[f64]) -> Self {
        let m = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / m;
        let my = ys.iter().sum::<f64>() / m;
        let prods: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).collect();
        let value = prods.iter().sum::<f64>() / (m - 1.0);
        let pm = prods.iter().sum::<f64>() / m;
        let pv = prods.iter().map(|p| (p - pm).powi(2)).sum::<f64>() / (m - 1.0);
        CovarianceEstimate { value, std_error: (pv / m).sqrt() }
    }
}

/// Label of a functional at a time, e.g. `N(1.0)`.
pub fn label(f: Functional, t: f64) -> String {
    format!("{f}({t:?})")
}

#[derive(Clone, Debug, Serialize)]
pub struct MonteCarloSummary {
    pub replications: usize,
    pub estimates: BTreeMap<String, Estimate>,
    pub covariances: BTreeMap<(String, String), CovarianceEstimate>,
}

impl MonteCarloSummary {
    pub fn estimate(&self, f: Functional, t: f64) -> Option<&Estimate> {
        self.estimates.get(&label(f, t))
    }

    /// Covariance of two labelled functionals, in either order.
    pub fn covariance(&self, a: (Functional, f64), b: (Functional, f64)) -> Option<&CovarianceEstimate> {
        let (la, lb) = (label(a.0, a.1), label(b.0, b.1));
        self.covariances.get(&(la.clone(), lb.clone())).or_else(|| self.covariances.get(&(lb, la)))
    }
}

/// Monte Carlo estimates of the requested functionals at the requested
/// times, with all pairwise covariances. `horizon` is the largest time.
pub fn monte_carlo<G>(
    spec: &ModelSpec,
    n0: State,
    times: &[f64],
    m: usize,
    requested: &[Functional],
    g: G,
    base_seed: u64,
) -> Result<MonteCarloSummary>
where
    G: Fn(State) -> f64 + Sync + Send,
{
    if m < 2 {
        return Err(Error::domain("Monte Carlo needs at least 2 replications"));
    }
    let horizon = times.iter().cloned().fold(f64::NAN, f64::max);
    if !(horizon > 0.0) {
        return Err(Error::domain("Monte Carlo needs a positive query time"));
    }
    check_start(spec, n0)?;
    let runs: Vec<Result<Vec<f64>>> = replicate(m, base_seed, |_, seed| {
        let traj = simulate_trajectory(spec, n0, horizon, seed)?;
        let pf = functionals(&traj, &g, times)?;
        let mut row = Vec::with_capacity(requested.len() * times.len());
        for &f in requested {
            for k in 0..times.len() {
                row.push(match f {
                    Functional::N => pf.population[k] as f64,
                    Functional::B => pf.cumulative_births[k] as f64,
                    Functional::D => pf.cumulative_deaths[k] as f64,
                    Functional::X => pf.path_integral[k],
                });
            }
        }
        Ok(row)
    });
    let rows = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let labels: Vec<String> = requested
        .iter()
        .flat_map(|&f| times.iter().map(move |&t| label(f, t)))
        .collect();
    let columns: Vec<Vec<f64>> = (0..labels.len()).map(|c| rows.iter().map(|r| r[c]).collect()).collect();
    let mut estimates = BTreeMap::new();
    let mut covariances = BTreeMap::new();
    for (a, ca) in labels.iter().zip(&columns) {
        estimates.insert(a.clone(), Estimate::from_samples(ca));
    }
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            covariances.insert(
                (labels[i].clone(), labels[j].clone()),
                CovarianceEstimate::from_samples(&columns[i], &columns[j]),
            );
        }
    }
    Ok(MonteCarloSummary { replications: m, estimates, covariances })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Lattice;
    use proptest::prelude::*;

    fn lbdp(l: f64, m: f64) -> ModelSpec {
        ModelSpec::linear(vec![l], vec![m]).unwrap()
    }

    #[test]
    fn absorbed_start_has_no_jumps() {
        let t = simulate_trajectory(&lbdp(2.0, 1.0), 0, 5.0, 1).unwrap();
        assert!(t.jump_times.is_empty());
        assert_eq!(hitting_time(&t), HittingTime::Hit(0.0));
    }

    #[test]
    fn replay_is_bit_identical() {
        let spec = ModelSpec::constant(vec![1.0], vec![1.0]).unwrap();
        let a = simulate_trajectory(&spec, 1, 1.0, 99).unwrap();
        let b = simulate_trajectory(&spec, 1, 1.0, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_horizon() {
        assert!(simulate_trajectory(&lbdp(1.0, 1.0), 1, 0.0, 1).is_err());
        assert!(simulate_trajectory(&lbdp(1.0, 1.0), 1, -1.0, 1).is_err());
    }

    fn hand_path() -> Trajectory {
        Trajectory {
            initial_state: 1,
            jump_times: vec![0.5],
            events: vec![EventDescriptor::birth(2)],
            horizon: 1.0,
            seed: 0,
        }
    }

    #[test]
    fn piecewise_integral_by_hand() {
        let pf = functionals(&hand_path(), |n| n as f64, &[1.0]).unwrap();
        assert!((pf.path_integral[0] - 2.0).abs() < 1e-15);
        assert_eq!((pf.population[0], pf.cumulative_births[0], pf.cumulative_deaths[0]), (3, 3, 0));
    }

    #[test]
    fn constant_path_integral() {
        let traj = Trajectory { initial_state: 1, jump_times: vec![], events: vec![], horizon: 2.0, seed: 0 };
        let pf = functionals(&traj, |n| n as f64, &[2.0]).unwrap();
        assert_eq!(pf.path_integral[0], 2.0);
        assert!(functionals(&traj, |n| n as f64, &[2.5]).is_err());
    }

    #[test]
    fn censored_when_zero_not_reached() {
        let traj = hand_path();
        assert_eq!(hitting_time(&traj), HittingTime::Censored(1.0));
    }

    #[test]
    fn hitting_sample_trivia() {
        let spec = lbdp(1.0, 2.0);
        let s = sample_hitting_functional(&spec, 0, |_| 1.0, 3, DEFAULT_MAX_JUMPS).unwrap();
        assert_eq!((s.z, s.w, s.censored), (0.0, 0.0, false));
        let s = sample_hitting_functional(&spec, 3, |_| 1.0, 3, DEFAULT_MAX_JUMPS).unwrap();
        assert_eq!(s.z, s.w);
        let s = sample_hitting_functional(&lbdp(5.0, 0.1), 1, |_| 1.0, 3, 50).unwrap();
        assert!(s.censored);
        let imm = ModelSpec::immigration_at_zero(vec![1.0], vec![1.0], 0.5).unwrap();
        assert!(sample_hitting_functional(&imm, 1, |_| 1.0, 3, 10).is_err());
    }

    #[test]
    fn monte_carlo_needs_two_runs() {
        assert!(monte_carlo(&lbdp(1.0, 1.0), 1, &[1.0], 1, &[Functional::N], |n| n as f64, 0).is_err());
    }

    #[test]
    fn monte_carlo_is_schedule_independent() {
        let spec = ModelSpec::linear(vec![1.0, 0.5], vec![0.5, 0.25]).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
                monte_carlo(&spec, 1, &[0.5, 1.0], 2000, &[Functional::N, Functional::X], |n| n as f64, 5)
                    .unwrap()
            })
        };
        let (a, b) = (run(1), run(4));
        assert_eq!(a.estimates, b.estimates);
        assert_eq!(a.covariances, b.covariances);
    }

    #[test]
    fn lbdp_mean_matches_exponential_growth() {
        let spec = lbdp(2.0, 1.0);
        let s = monte_carlo(&spec, 1, &[1.0], 100_000, &[Functional::N], |n| n as f64, 0).unwrap();
        let e = s.estimate(Functional::N, 1.0).unwrap();
        assert!((e.mean - 1f64.exp()).abs() < 3.0 * e.std_error, "{e:?}");
    }

    #[test]
    fn subcritical_extinction_is_certain() {
        let spec = lbdp(1.0, 2.0);
        let hits = replicate(100_000, 21, |_, seed| {
            let t = simulate_trajectory(&spec, 1, 20.0, seed).unwrap();
            matches!(hitting_time(&t), HittingTime::Hit(z) if z < 20.0)
        });
        let p = hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64;
        let se = (p * (1.0 - p) / hits.len() as f64).sqrt().max(1.0 / hits.len() as f64);
        assert!((1.0 - p) <= 3.0 * se, "p={p}");
    }

    /// Kolmogorov-Smirnov critical value at level 0.01 for large samples.
    fn ks_critical(n: usize) -> f64 {
        1.628 / (n as f64).sqrt()
    }

    #[test]
    fn sojourns_are_exponential_and_choices_follow_rates() {
        let spec = ModelSpec::linear(vec![1.0, 0.5], vec![0.5, 0.25]).unwrap();
        let state = 3;
        let rate = spec.total_exit_rate(state).unwrap();
        let draws: Vec<Step> = replicate(10_000, 8, |_, seed| step(&spec, state, &mut generator(seed)));
        let mut xs: Vec<f64> = draws.iter().map(|s| s.dt).collect();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let cdf = 1.0 - (-rate * x).exp();
                (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < ks_critical(xs.len()), "ks={ks}");

        for (ev, r) in spec.events_at(state) {
            let p = r / rate;
            let freq = draws.iter().filter(|s| s.event == Some(ev)).count() as f64 / n;
            let se = (p * (1.0 - p) / n).sqrt();
            assert!((freq - p).abs() < 3.0 * se, "{ev:?}: {freq} vs {p}");
        }
    }

    #[test]
    fn integer_lattice_walk_goes_negative() {
        let spec = ModelSpec::constant(vec![0.1], vec![3.0]).unwrap().with_lattice(Lattice::Integers).unwrap();
        let t = simulate_trajectory(&spec, 1, 5.0, 4).unwrap();
        assert!(t.final_state() < 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn paths_respect_invariants(
            l1 in 0.0f64..2.0, l2 in 0.0f64..2.0, m1 in 0.0f64..2.0, m2 in 0.0f64..2.0,
            k in 3u32..12, n0 in 0i64..3, seed: u64, parking: bool,
        ) {
            let spec = if parking {
                ModelSpec::parking(vec![l1, l2], vec![m1, m2], k).unwrap()
            } else {
                ModelSpec::linear(vec![l1, l2], vec![m1, m2]).unwrap()
            };
            let traj = simulate_trajectory(&spec, n0, 2.0, seed).unwrap();
            prop_assert!(traj.jump_times.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(traj.jump_times.iter().all(|&t| t <= 2.0));
            for n in traj.states() {
                prop_assert!(spec.is_valid_state(n));
            }
            let grid = [0.0, 0.3, 1.0, 1.7, 2.0];
            let pf = functionals(&traj, |_| 1.0, &grid).unwrap();
            for i in 0..grid.len() {
                prop_assert_eq!(pf.population[i], pf.cumulative_births[i] - pf.cumulative_deaths[i]);
                prop_assert!((pf.path_integral[i] - grid[i]).abs() < 1e-12);
                prop_assert_eq!(pf.population[i], traj.state_at(grid[i]));
            }
            prop_assert!(pf.cumulative_births.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(pf.cumulative_deaths.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
