//! Truncated Kolmogorov forward systems: state probabilities, joint laws
//! with cumulative births and deaths, and the parking-lot chain.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{solve_window, Axis, Point, WindowOptions, WindowSolution};
use crate::model::{EventKind, Lattice, ModelSpec, State, Variant};

/// Initial upper extent of an unbounded axis.
const INITIAL_EXTENT: i64 = 64;

/// Probabilities on consecutive states `offset, offset + 1, ...` with the
/// mass that left the window reported separately.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TruncatedPmf {
    pub t: f64,
    pub offset: State,
    pub probs: Vec<f64>,
    pub deficit: f64,
}

impl TruncatedPmf {
    pub fn prob(&self, n: State) -> f64 {
        let k = n - self.offset;
        if k < 0 {
            return 0.0;
        }
        self.probs.get(k as usize).copied().unwrap_or(0.0)
    }

    pub fn states(&self) -> impl Iterator<Item = (State, f64)> + '_ {
        self.probs.iter().enumerate().map(|(k, &p)| (self.offset + k as State, p))
    }

    pub fn last_state(&self) -> State {
        self.offset + self.probs.len() as State - 1
    }

    pub fn mean(&self) -> f64 {
        self.states().map(|(n, p)| n as f64 * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.states().map(|(n, p)| (n as f64 - m).powi(2) * p).sum()
    }

    /// Total variation distance to another pmf over the union of supports.
    pub fn total_variation(&self, other: &TruncatedPmf) -> f64 {
        let lo = self.offset.min(other.offset);
        let hi = self.last_state().max(other.last_state());
        0.5 * (lo..=hi).map(|n| (self.prob(n) - other.prob(n)).abs()).sum::<f64>()
    }
}

/// Settings for the transient solvers.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct SolveOptions {
    pub window: WindowOptions,
}

/// Point mass at `n`.
pub fn point_mass(n: State) -> Vec<(State, f64)> {
    vec![(n, 1.0)]
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::domain("at least one output time is required"));
    }
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("times must be finite, nonnegative and strictly increasing"));
    }
    Ok(())
}

fn check_init(spec: &ModelSpec, init: &[(State, f64)]) -> Result<()> {
    if init.is_empty() {
        return Err(Error::domain("initial distribution is empty"));
    }
    let mut total = 0.0;
    for &(n, w) in init {
        if !spec.is_valid_state(n) {
            return Err(Error::domain(format!("initial state {n} is outside the state space")));
        }
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::domain(format!("initial weight {w} is invalid")));
        }
        total += w;
    }
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::domain(format!("initial distribution sums to {total}, not 1")));
    }
    Ok(())
}

/// Axis for the population coordinate, covering `lo..=hi` initially.
fn population_axis(spec: &ModelSpec, lo: State, hi: State) -> Axis {
    match (spec.lattice(), spec.capacity()) {
        (_, Some(k)) => Axis::fixed(0, k as State),
        (Lattice::Integers, None) => Axis::both(lo - INITIAL_EXTENT / 2, hi + INITIAL_EXTENT / 2),
        (Lattice::NonNegative, None) => Axis::upward(0, hi + INITIAL_EXTENT),
    }
}

fn population_events(spec: &ModelSpec, p: &Point<1>, out: &mut Vec<(Point<1>, f64)>) {
    for (e, r) in spec.events_at(p[0]) {
        out.push(([p[0] + e.delta()], r));
    }
}

fn window_to_pmfs(sol: WindowSolution<1>, times: &[f64]) -> Vec<TruncatedPmf> {
    let lo = sol.states.iter().map(|s| s[0]).min().unwrap();
    let hi = sol.states.iter().map(|s| s[0]).max().unwrap();
    sol.snapshots
        .into_iter()
        .zip(times)
        .map(|((p, deficit), &t)| {
            let mut probs = vec![0.0; (hi - lo + 1) as usize];
            for (s, q) in sol.states.iter().zip(p) {
                probs[(s[0] - lo) as usize] = q;
            }
            TruncatedPmf { t, offset: lo, probs, deficit }
        })
        .collect()
}

/// Transient state probabilities from the initial distribution `init`.
///
/// The window grows until the deficit and the mass in the outermost five
/// states are at most `deficit_tolerance` at every output time.
pub fn solve_state_probabilities(
    spec: &ModelSpec,
    init: &[(State, f64)],
    times: &[f64],
    opts: &SolveOptions,
) -> Result<Vec<TruncatedPmf>> {
    check_times(times)?;
    check_init(spec, init)?;
    let lo = init.iter().map(|x| x.0).min().unwrap();
    let hi = init.iter().map(|x| x.0).max().unwrap();
    let axis = population_axis(spec, lo, hi);
    let seeds: Vec<(Point<1>, f64)> = init.iter().map(|&(n, w)| ([n], w)).collect();
    let sol = solve_window(&seeds, [axis], |p, out| population_events(spec, p, out), times, &opts.window)?;
    Ok(window_to_pmfs(sol, times))
}

/// Probability of state `target` at each time, computed on windows that keep
/// doubling until the value moves by less than `change_tol`. The deficit is
/// only reported, so this works for supercritical chains whose mass escapes
/// any fixed window while the probability of `target` still converges.
pub fn probability_of_state(
    spec: &ModelSpec,
    init: &[(State, f64)],
    target: State,
    times: &[f64],
    change_tol: f64,
    opts: &SolveOptions,
) -> Result<Vec<f64>> {
    check_times(times)?;
    check_init(spec, init)?;
    if spec.lattice() == Lattice::Integers {
        return Err(Error::Unsupported("probability_of_state needs a nonnegative lattice".into()));
    }
    let hi0 = init.iter().map(|x| x.0).max().unwrap().max(target);
    let mut axis = population_axis(spec, 0, hi0);
    axis.grow_hi = false;
    let seeds: Vec<(Point<1>, f64)> = init.iter().map(|&(n, w)| ([n], w)).collect();
    let mut loose = opts.window;
    loose.deficit_tolerance = f64::INFINITY;
    let mut previous: Option<Vec<f64>> = None;
    loop {
        let sol = solve_window(&seeds, [axis], |p, out| population_events(spec, p, out), times, &loose)?;
        let idx = sol.states.iter().position(|s| s[0] == target);
        let values: Vec<f64> = sol.snapshots.iter().map(|(p, _)| idx.map_or(0.0, |i| p[i])).collect();
        if let Some(prev) = &previous {
            let change = prev.iter().zip(&values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if change < change_tol {
                return Ok(values);
            }
        }
        if spec.capacity().is_some() {
            return Ok(values);
        }
        let states = sol.states.len();
        if states * 2 > opts.window.max_states {
            let deficit = sol.snapshots.last().map_or(f64::NAN, |s| s.1);
            return Err(Error::Truncation {
                message: format!("p({target}, t) did not settle as the window grew"),
                states,
                deficit,
            });
        }
        previous = Some(values);
        axis.hi = 2 * axis.hi + 1;
    }
}

/// Piecewise cubic Hermite interpolant of `p(0, t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct P0Curve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
}

impl P0Curve {
    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t).clamp(1, self.times.len() - 1);
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let (h00, h10) = (2.0 * s.powi(3) - 3.0 * s * s + 1.0, s.powi(3) - 2.0 * s * s + s);
        let (h01, h11) = (-2.0 * s.powi(3) + 3.0 * s * s, s.powi(3) - s * s);
        h00 * self.values[k - 1] + h10 * h * self.slopes[k - 1] + h01 * self.values[k] + h11 * h * self.slopes[k]
    }
}

/// Sample `p(0, t)` on a uniform grid of `points + 1` nodes over `[0, end]`
/// from state 1, with exact slopes taken from the forward equation.
pub fn p0_curve(spec: &ModelSpec, end: f64, points: usize, opts: &SolveOptions) -> Result<P0Curve> {
    if !(end > 0.0) || points < 1 {
        return Err(Error::domain("p0 curve needs a positive end time and at least one interval"));
    }
    let times: Vec<f64> = (0..=points).map(|k| end * k as f64 / points as f64).collect();
    let pmfs = solve_state_probabilities(spec, &point_mass(1), &times, opts)?;
    let exit0 = spec.total_exit_rate(0)?;
    let mut values = Vec::with_capacity(pmfs.len());
    let mut slopes = Vec::with_capacity(pmfs.len());
    for pmf in &pmfs {
        let inflow: f64 = pmf
            .states()
            .filter(|&(n, p)| n > 0 && p > 0.0)
            .map(|(n, p)| {
                let r = (1..=spec.k2())
                    .filter(|&j| j as State == n)
                    .map(|j| spec.death_rate_unchecked(n, j))
                    .sum::<f64>();
                r * p
            })
            .sum();
        values.push(pmf.prob(0));
        slopes.push(inflow - exit0 * pmf.prob(0));
    }
    Ok(P0Curve { times, values, slopes })
}

/// One stored axis of a joint grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridAxis {
    pub name: &'static str,
    pub offset: State,
    pub len: usize,
}

/// Coordinate computed from two stored ones as `minuend - subtrahend`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DerivedAxis {
    pub name: &'static str,
    pub minuend: usize,
    pub subtrahend: usize,
}

/// Dense joint pmf over the stored axes, optionally with a derived axis
/// appended to the coordinate list.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JointPmfGrid {
    pub t: f64,
    pub axes: Vec<GridAxis>,
    pub values: Vec<f64>,
    pub derived: Option<DerivedAxis>,
    pub deficit: f64,
}

impl JointPmfGrid {
    pub fn axis_names(&self) -> Vec<&'static str> {
        let mut names: Vec<_> = self.axes.iter().map(|a| a.name).collect();
        if let Some(d) = &self.derived {
            names.push(d.name);
        }
        names
    }

    fn position(&self, name: &str) -> Result<usize> {
        self.axis_names()
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| Error::domain(format!("grid has no axis named {name}")))
    }

    fn unflatten(&self, mut flat: usize) -> Vec<State> {
        let mut coords = vec![0; self.axes.len()];
        for (k, a) in self.axes.iter().enumerate().rev() {
            coords[k] = a.offset + (flat % a.len) as State;
            flat /= a.len;
        }
        if let Some(d) = &self.derived {
            coords.push(coords[d.minuend] - coords[d.subtrahend]);
        }
        coords
    }

    /// Every cell with positive probability, as full coordinates.
    pub fn entries(&self) -> impl Iterator<Item = (Vec<State>, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(k, &p)| (self.unflatten(k), p))
    }

    /// Probability of full coordinates (stored axes, then the derived one).
    pub fn prob(&self, coords: &[State]) -> f64 {
        let stored = self.axes.len();
        if coords.len() != self.axis_names().len() {
            return 0.0;
        }
        if let Some(d) = &self.derived {
            if coords[stored] != coords[d.minuend] - coords[d.subtrahend] {
                return 0.0;
            }
        }
        let mut flat = 0usize;
        for (a, &x) in self.axes.iter().zip(coords) {
            let k = x - a.offset;
            if k < 0 || k as usize >= a.len {
                return 0.0;
            }
            flat = flat * a.len + k as usize;
        }
        self.values[flat]
    }

    /// Marginal pmf of one axis.
    pub fn marginal(&self, name: &str) -> Result<TruncatedPmf> {
        let k = self.position(name)?;
        let mut lo = State::MAX;
        let mut hi = State::MIN;
        let cells: Vec<(State, f64)> = self.entries().map(|(c, p)| (c[k], p)).collect();
        for &(x, _) in &cells {
            lo = lo.min(x);
            hi = hi.max(x);
        }
        if cells.is_empty() {
            return Ok(TruncatedPmf { t: self.t, offset: 0, probs: vec![], deficit: self.deficit });
        }
        let mut probs = vec![0.0; (hi - lo + 1) as usize];
        for (x, p) in cells {
            probs[(x - lo) as usize] += p;
        }
        Ok(TruncatedPmf { t: self.t, offset: lo, probs, deficit: self.deficit })
    }

    pub fn mean(&self, name: &str) -> Result<f64> {
        let k = self.position(name)?;
        Ok(self.entries().map(|(c, p)| c[k] as f64 * p).sum())
    }

    pub fn covariance(&self, a: &str, b: &str) -> Result<f64> {
        let (ka, kb) = (self.position(a)?, self.position(b)?);
        let (ma, mb) = (self.mean(a)?, self.mean(b)?);
        Ok(self.entries().map(|(c, p)| (c[ka] as f64 - ma) * (c[kb] as f64 - mb) * p).sum())
    }

    pub fn variance(&self, name: &str) -> Result<f64> {
        self.covariance(name, name)
    }
}

fn window_to_grids(
    sol: WindowSolution<2>,
    names: [&'static str; 2],
    derived: Option<DerivedAxis>,
    times: &[f64],
) -> Vec<JointPmfGrid> {
    let lo: Vec<State> = (0..2).map(|d| sol.states.iter().map(|s| s[d]).min().unwrap()).collect();
    let hi: Vec<State> = (0..2).map(|d| sol.states.iter().map(|s| s[d]).max().unwrap()).collect();
    let axes: Vec<GridAxis> = (0..2)
        .map(|d| GridAxis { name: names[d], offset: lo[d], len: (hi[d] - lo[d] + 1) as usize })
        .collect();
    sol.snapshots
        .into_iter()
        .zip(times)
        .map(|((p, deficit), &t)| {
            let mut values = vec![0.0; axes[0].len * axes[1].len];
            for (s, q) in sol.states.iter().zip(p) {
                let flat = (s[0] - lo[0]) as usize * axes[1].len + (s[1] - lo[1]) as usize;
                values[flat] = q;
            }
            JointPmfGrid { t, axes: axes.clone(), values, derived: derived.clone(), deficit }
        })
        .collect()
}

fn require_start(spec: &ModelSpec, n0: State) -> Result<()> {
    if spec.variant() == Variant::Parking {
        return Err(Error::Unsupported("use solve_parking_joint for the parking lot".into()));
    }
    if !spec.is_valid_state(n0) {
        return Err(Error::domain(format!("initial state {n0} is outside the state space")));
    }
    Ok(())
}

/// Pushes the birth and death moves of the population coordinate `n`,
/// tagging each with its kind and size.
fn moves(spec: &ModelSpec, n: State, mut push: impl FnMut(EventKind, State, f64)) {
    for (e, r) in spec.events_at(n) {
        push(e.kind, e.size as State, r);
    }
}

/// Joint law of cumulative births `b` (initial individuals included) and the
/// population `n`, starting from `n0`.
pub fn solve_joint_birth(spec: &ModelSpec, n0: State, times: &[f64], opts: &SolveOptions) -> Result<Vec<JointPmfGrid>> {
    check_times(times)?;
    require_start(spec, n0)?;
    let axes = [Axis::upward(n0, n0 + INITIAL_EXTENT), population_axis(spec, n0, n0)];
    let sol = solve_window(
        &[([n0, n0], 1.0)],
        axes,
        |p: &Point<2>, out: &mut Vec<(Point<2>, f64)>| {
            moves(spec, p[1], |kind, s, r| match kind {
                EventKind::Birth => out.push(([p[0] + s, p[1] + s], r)),
                EventKind::Death => out.push(([p[0], p[1] - s], r)),
            })
        },
        times,
        &opts.window,
    )?;
    Ok(window_to_grids(sol, ["b", "n"], None, times))
}

/// Joint law of cumulative deaths `d` and the population `n`.
pub fn solve_joint_death(spec: &ModelSpec, n0: State, times: &[f64], opts: &SolveOptions) -> Result<Vec<JointPmfGrid>> {
    check_times(times)?;
    require_start(spec, n0)?;
    let axes = [Axis::upward(0, INITIAL_EXTENT), population_axis(spec, n0, n0)];
    let sol = solve_window(
        &[([0, n0], 1.0)],
        axes,
        |p: &Point<2>, out: &mut Vec<(Point<2>, f64)>| {
            moves(spec, p[1], |kind, s, r| match kind {
                EventKind::Birth => out.push(([p[0], p[1] + s], r)),
                EventKind::Death => out.push(([p[0] + s, p[1] - s], r)),
            })
        },
        times,
        &opts.window,
    )?;
    Ok(window_to_grids(sol, ["d", "n"], None, times))
}

/// Joint law of `(d, b, n)`. Only `(d, b)` is stored; `n = b - d` holds on
/// every path, so the third coordinate is derived.
pub fn solve_joint_full(spec: &ModelSpec, n0: State, times: &[f64], opts: &SolveOptions) -> Result<Vec<JointPmfGrid>> {
    check_times(times)?;
    require_start(spec, n0)?;
    let axes = [Axis::upward(0, INITIAL_EXTENT), Axis::upward(n0, n0 + INITIAL_EXTENT)];
    let sol = solve_window(
        &[([0, n0], 1.0)],
        axes,
        |p: &Point<2>, out: &mut Vec<(Point<2>, f64)>| {
            moves(spec, p[1] - p[0], |kind, s, r| match kind {
                EventKind::Birth => out.push(([p[0], p[1] + s], r)),
                EventKind::Death => out.push(([p[0] + s, p[1]], r)),
            })
        },
        times,
        &opts.window,
    )?;
    let derived = DerivedAxis { name: "n", minuend: 1, subtrahend: 0 };
    Ok(window_to_grids(sol, ["d", "b"], Some(derived), times))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ParkingCount {
    Arrivals,
    Departures,
}

/// Joint law of cumulative arrivals (or departures) and occupancy for the
/// parking lot, starting empty.
pub fn solve_parking_joint(
    spec: &ModelSpec,
    which: ParkingCount,
    times: &[f64],
    opts: &SolveOptions,
) -> Result<Vec<JointPmfGrid>> {
    check_times(times)?;
    spec.require(&[Variant::Parking], "the parking joint law")?;
    let k = spec.capacity().unwrap() as State;
    let axes = [Axis::upward(0, INITIAL_EXTENT), Axis::fixed(0, k)];
    let sol = solve_window(
        &[([0, 0], 1.0)],
        axes,
        |p: &Point<2>, out: &mut Vec<(Point<2>, f64)>| {
            moves(spec, p[1], |kind, s, r| match (kind, which) {
                (EventKind::Birth, ParkingCount::Arrivals) => out.push(([p[0] + s, p[1] + s], r)),
                (EventKind::Birth, ParkingCount::Departures) => out.push(([p[0], p[1] + s], r)),
                (EventKind::Death, ParkingCount::Arrivals) => out.push(([p[0], p[1] - s], r)),
                (EventKind::Death, ParkingCount::Departures) => out.push(([p[0] + s, p[1] - s], r)),
            })
        },
        times,
        &opts.window,
    )?;
    let name = match which {
        ParkingCount::Arrivals => "a",
        ParkingCount::Departures => "d",
    };
    Ok(window_to_grids(sol, [name, "n"], None, times))
}
