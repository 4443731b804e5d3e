//! Finite-window continuous-time Markov chains on integer lattices.
//!
//! States are points of `Z^D`. A window (a box) limits the states that are
//! tracked; probability flowing to states outside the box is accumulated in a
//! deficit instead of being reflected back. The driver grows the box until
//! both the deficit and the mass near each growable edge are below tolerance.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ode::{integrate, OdeOptions};
use crate::special::poisson_window;

pub type Point<const D: usize> = [i64; D];

/// Width of the edge band whose mass must stay below the tolerance.
pub const EDGE_BAND: i64 = 5;
/// Negative probabilities smaller than this in magnitude are clamped to 0.
pub const CLAMP_LIMIT: f64 = 1e-12;
/// Allowed drift of `sum(p) + deficit` away from 1.
pub const CONSERVATION_LIMIT: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Axis {
    pub lo: i64,
    pub hi: i64,
    pub grow_lo: bool,
    pub grow_hi: bool,
}

impl Axis {
    pub fn fixed(lo: i64, hi: i64) -> Self {
        Axis { lo, hi, grow_lo: false, grow_hi: false }
    }

    pub fn upward(lo: i64, hi: i64) -> Self {
        Axis { lo, hi, grow_lo: false, grow_hi: true }
    }

    pub fn both(lo: i64, hi: i64) -> Self {
        Axis { lo, hi, grow_lo: true, grow_hi: true }
    }

    fn contains(&self, x: i64) -> bool {
        (self.lo..=self.hi).contains(&x)
    }

    fn width(&self) -> i64 {
        self.hi - self.lo + 1
    }

    fn grow(&mut self) {
        let w = self.width();
        if self.grow_hi {
            self.hi += w;
        }
        if self.grow_lo {
            self.lo -= w;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Backend {
    #[default]
    RungeKutta,
    /// Exact up to the Poisson truncation; cost grows with the largest exit
    /// rate in the window, so best suited to finite chains.
    Uniformization,
}

/// Settings of a windowed transient solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowOptions {
    pub ode: OdeOptions,
    pub deficit_tolerance: f64,
    pub max_states: usize,
    pub backend: Backend,
    pub poisson_tolerance: f64,
}

impl Default for WindowOptions {
    fn default() -> Self {
        WindowOptions {
            ode: OdeOptions::default(),
            deficit_tolerance: 1e-9,
            max_states: 1 << 16,
            backend: Backend::RungeKutta,
            poisson_tolerance: 1e-12,
        }
    }
}

/// Sparse generator restricted to the reachable states of a window.
#[derive(Debug)]
pub struct WindowChain<const D: usize> {
    pub states: Vec<Point<D>>,
    pub index: HashMap<Point<D>, usize>,
    transitions: Vec<(usize, usize, f64)>,
    exit: Vec<f64>,
    leak: Vec<f64>,
}

impl<const D: usize> WindowChain<D> {
    /// Enumerate states reachable from `seeds` inside `axes`. `events` pushes
    /// `(target, rate)` pairs for a state; rates must be finite and `>= 0`.
    pub fn build<E>(seeds: &[Point<D>], axes: &[Axis; D], mut events: E, max_states: usize) -> Result<Self>
    where
        E: FnMut(&Point<D>, &mut Vec<(Point<D>, f64)>),
    {
        let inside = |p: &Point<D>| p.iter().zip(axes).all(|(&x, a)| a.contains(x));
        let mut states = Vec::new();
        let mut index = HashMap::new();
        for s in seeds {
            if !inside(s) {
                return Err(Error::domain(format!("initial state {s:?} outside the window")));
            }
            if !index.contains_key(s) {
                index.insert(*s, states.len());
                states.push(*s);
            }
        }
        let mut transitions = Vec::new();
        let mut exit = Vec::new();
        let mut leak = Vec::new();
        let mut buf = Vec::new();
        let mut head = 0;
        while head < states.len() {
            let from = states[head];
            buf.clear();
            events(&from, &mut buf);
            let (mut out, mut lost) = (0.0, 0.0);
            for &(to, rate) in &buf {
                if rate <= 0.0 {
                    continue;
                }
                if !rate.is_finite() {
                    return Err(Error::Numerical(format!("non-finite rate at {from:?}")));
                }
                out += rate;
                if inside(&to) {
                    let next = match index.get(&to) {
                        Some(&k) => k,
                        None => {
                            if states.len() >= max_states {
                                return Err(Error::Truncation {
                                    message: "window holds too many reachable states".into(),
                                    states: states.len(),
                                    deficit: f64::NAN,
                                });
                            }
                            index.insert(to, states.len());
                            states.push(to);
                            states.len() - 1
                        }
                    };
                    transitions.push((head, next, rate));
                } else {
                    lost += rate;
                }
            }
            exit.push(out);
            leak.push(lost);
            head += 1;
        }
        transitions.sort_by_key(|&(f, t, _)| (t, f));
        Ok(WindowChain { states, index, transitions, exit, leak })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    fn apply(&self, p: &[f64], dp: &mut [f64]) -> f64 {
        for i in 0..p.len() {
            dp[i] = -self.exit[i] * p[i];
        }
        for &(f, t, r) in &self.transitions {
            dp[t] += r * p[f];
        }
        self.leak.iter().zip(p).map(|(l, q)| l * q).sum()
    }

    /// Forward equations by Runge-Kutta. Returns `(p, deficit)` per time.
    pub fn forward(&self, p0: &[f64], times: &[f64], opts: &OdeOptions) -> Result<Vec<(Vec<f64>, f64)>> {
        let n = self.len();
        let mut y0 = p0.to_vec();
        y0.push(0.0);
        // Errors of order atol can show up as negative probabilities; keep
        // them an order of magnitude inside the clamp limit.
        let opts = &OdeOptions { atol: opts.atol.min(0.1 * CLAMP_LIMIT), ..*opts };
        let sols = integrate(
            |_, y, d| {
                let (p, tail) = y.split_at(n);
                let (dp, dtail) = d.split_at_mut(n);
                let _ = tail;
                dtail[0] = self.apply(p, dp);
            },
            0.0,
            &y0,
            times,
            opts,
        )?;
        sols.into_iter()
            .map(|mut y| {
                let def = y.pop().unwrap();
                finalize(y, def)
            })
            .collect()
    }

    /// Transient solution by uniformization, truncating the Poisson mixture
    /// at mass `tol`.
    pub fn uniformize(&self, p0: &[f64], times: &[f64], tol: f64) -> Result<Vec<(Vec<f64>, f64)>> {
        let q = self.exit.iter().cloned().fold(0.0, f64::max);
        let mut out = Vec::with_capacity(times.len());
        let mut current = p0.to_vec();
        let mut prev_t = 0.0;
        let mut dp = vec![0.0; self.len()];
        for &t in times {
            if t < prev_t {
                return Err(Error::domain("output times must be increasing"));
            }
            let qt = q * (t - prev_t);
            if qt > 0.0 {
                let (lo, weights, _) = poisson_window(qt, tol);
                let mut v = current.clone();
                let mut acc = vec![0.0; v.len()];
                for k in 0..lo + weights.len() {
                    if k >= lo {
                        let w = weights[k - lo];
                        for (a, x) in acc.iter_mut().zip(&v) {
                            *a += w * x;
                        }
                    }
                    self.apply(&v, &mut dp);
                    for (x, d) in v.iter_mut().zip(&dp) {
                        *x += d / q;
                    }
                }
                current = acc;
            }
            prev_t = t;
            let total: f64 = current.iter().sum();
            out.push(finalize(current.clone(), (1.0 - total).max(0.0))?);
        }
        Ok(out)
    }
}

fn finalize(mut p: Vec<f64>, deficit: f64) -> Result<(Vec<f64>, f64)> {
    for x in p.iter_mut() {
        if *x < 0.0 {
            if *x < -CLAMP_LIMIT {
                return Err(Error::Numerical(format!("negative probability {x:e} exceeds clamp limit")));
            }
            *x = 0.0;
        }
    }
    let total: f64 = p.iter().sum();
    if (total + deficit - 1.0).abs() > CONSERVATION_LIMIT {
        return Err(Error::Numerical(format!(
            "mass drift {:e} exceeds conservation limit",
            total + deficit - 1.0
        )));
    }
    Ok((p, (1.0 - total).max(0.0)))
}

/// Result of a converged windowed solve.
#[derive(Debug)]
pub struct WindowSolution<const D: usize> {
    pub axes: [Axis; D],
    pub states: Vec<Point<D>>,
    /// `(probabilities aligned with states, deficit)` per output time.
    pub snapshots: Vec<(Vec<f64>, f64)>,
}

/// Mass of a snapshot in each growable edge band, keyed as (axis, upper?).
fn edge_excess<const D: usize>(axes: &[Axis; D], states: &[Point<D>], p: &[f64], tol: f64) -> Vec<usize> {
    let mut flagged = Vec::new();
    for (d, a) in axes.iter().enumerate() {
        let mut hi_mass = 0.0;
        let mut lo_mass = 0.0;
        for (s, &q) in states.iter().zip(p) {
            if a.grow_hi && s[d] > a.hi - EDGE_BAND {
                hi_mass += q;
            }
            if a.grow_lo && s[d] < a.lo + EDGE_BAND {
                lo_mass += q;
            }
        }
        if hi_mass > tol || lo_mass > tol {
            flagged.push(d);
        }
    }
    flagged
}

/// Solve the forward equations, growing the window until every output time
/// has deficit and edge-band mass at most `deficit_tolerance`.
pub fn solve_window<const D: usize, E>(
    init: &[(Point<D>, f64)],
    mut axes: [Axis; D],
    mut events: E,
    times: &[f64],
    opts: &WindowOptions,
) -> Result<WindowSolution<D>>
where
    E: FnMut(&Point<D>, &mut Vec<(Point<D>, f64)>),
{
    let seeds: Vec<Point<D>> = init.iter().map(|(s, _)| *s).collect();
    loop {
        let chain = WindowChain::build(&seeds, &axes, &mut events, opts.max_states)?;
        let mut p0 = vec![0.0; chain.len()];
        for (s, w) in init {
            p0[chain.index[s]] += w;
        }
        let snapshots = match opts.backend {
            Backend::RungeKutta => chain.forward(&p0, times, &opts.ode)?,
            Backend::Uniformization => chain.uniformize(&p0, times, opts.poisson_tolerance)?,
        };
        let tol = opts.deficit_tolerance;
        let worst_deficit = snapshots.iter().map(|s| s.1).fold(0.0, f64::max);
        let mut flagged: Vec<usize> = Vec::new();
        for (p, _) in &snapshots {
            for d in edge_excess(&axes, &chain.states, p, tol) {
                if !flagged.contains(&d) {
                    flagged.push(d);
                }
            }
        }
        if worst_deficit <= tol && flagged.is_empty() {
            return Ok(WindowSolution { axes, states: chain.states, snapshots });
        }
        if flagged.is_empty() {
            flagged = (0..D).filter(|&d| axes[d].grow_hi || axes[d].grow_lo).collect();
        }
        if flagged.is_empty() || chain.len() * 2 > opts.max_states {
            return Err(Error::Truncation {
                message: "deficit tolerance not reached within the state limit".into(),
                states: chain.len(),
                deficit: worst_deficit,
            });
        }
        for d in flagged {
            axes[d].grow();
        }
    }
}
