//! Rate laws for the generalized birth-death process and its variants.
//!
//! A [`ModelSpec`] fixes, for every state `n`, the rate of a birth of size
//! `i in 1..=k1` and of a death of size `j in 1..=k2`. Specs are validated on
//! construction and immutable afterwards.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Population size. Signed so that the unrestricted constant-rate walk can
/// be represented; every other lattice keeps it nonnegative.
pub type State = i64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Birth,
    Death,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Birth => "birth",
            EventKind::Death => "death",
        }
    }
}

/// One jump: `size` individuals born or removed at once.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EventDescriptor {
    pub kind: EventKind,
    pub size: u32,
}

impl EventDescriptor {
    pub fn birth(size: u32) -> Self {
        EventDescriptor { kind: EventKind::Birth, size }
    }

    pub fn death(size: u32) -> Self {
        EventDescriptor { kind: EventKind::Death, size }
    }

    /// Signed change in population caused by the event.
    pub fn delta(&self) -> State {
        match self.kind {
            EventKind::Birth => self.size as State,
            EventKind::Death => -(self.size as State),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Arbitrary state-dependent rates from a sparse table.
    #[serde(rename = "table")]
    GeneralTable,
    /// `n * lambda_i`, `n * mu_j`.
    Linear,
    /// `lambda_i`, `mu_j` independent of the state.
    Constant,
    /// Linear, plus rate `nu` for each birth size while the population is 0.
    #[serde(rename = "immigration_zero")]
    ImmigrationAtZero,
    /// `nu + n * lambda_i` births at every state.
    #[serde(rename = "immigration_all")]
    ImmigrationEverywhere,
    /// Finite lot of `K` spots: arrivals `(K - n) * lambda_i`, departures `n * mu_j`.
    Parking,
}

/// State space on which the chain lives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lattice {
    /// `n >= 0`; deaths that would go below zero have rate 0.
    #[default]
    #[serde(rename = "nonnegative")]
    NonNegative,
    /// All integers. Only meaningful for [`Variant::Constant`], where it gives
    /// the free compound-Poisson walk whose law the closed forms describe.
    Integers,
}

/// Scalar constants built from the rate vectors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DerivedConstants {
    /// Drift per individual: `sum i lambda_i - sum j mu_j`.
    pub eta: f64,
    /// `sum i^2 lambda_i + sum j^2 mu_j`.
    pub zeta: f64,
    /// `sum i^2 lambda_i * sum j mu_j + sum i lambda_i * sum j^2 mu_j`.
    pub xi: f64,
    /// Total rate per individual: `sum lambda_i + sum mu_j`.
    pub lambda_total: f64,
    /// `sum i lambda_i + sum j mu_j`.
    pub beta: f64,
    /// `sum i lambda_i`.
    pub birth_first: f64,
    /// `sum i^2 lambda_i`.
    pub birth_second: f64,
    /// `sum j mu_j`.
    pub death_first: f64,
    /// `sum j^2 mu_j`.
    pub death_second: f64,
}

/// Validated, immutable rate law.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    variant: Variant,
    lambda: Vec<f64>,
    mu: Vec<f64>,
    nu: f64,
    capacity: Option<u32>,
    table: BTreeMap<(State, EventKind, u32), f64>,
    lattice: Lattice,
    k1: usize,
    k2: usize,
}

fn check_rates(name: &str, rates: &[f64]) -> Result<()> {
    if rates.is_empty() {
        return Err(Error::domain(format!("{name} must have at least one entry")));
    }
    for (idx, &r) in rates.iter().enumerate() {
        if !r.is_finite() || r < 0.0 {
            return Err(Error::domain(format!(
                "{name}[{}] = {r} is not a finite nonnegative rate",
                idx + 1
            )));
        }
    }
    Ok(())
}

impl ModelSpec {
    fn from_vectors(variant: Variant, lambda: Vec<f64>, mu: Vec<f64>, nu: f64) -> Result<Self> {
        check_rates("lambda", &lambda)?;
        check_rates("mu", &mu)?;
        if !nu.is_finite() || nu < 0.0 {
            return Err(Error::domain(format!("immigration rate nu = {nu} is invalid")));
        }
        let (k1, k2) = (lambda.len(), mu.len());
        Ok(ModelSpec {
            variant,
            lambda,
            mu,
            nu,
            capacity: None,
            table: BTreeMap::new(),
            lattice: Lattice::NonNegative,
            k1,
            k2,
        })
    }

    pub fn linear(lambda: Vec<f64>, mu: Vec<f64>) -> Result<Self> {
        Self::from_vectors(Variant::Linear, lambda, mu, 0.0)
    }

    pub fn constant(lambda: Vec<f64>, mu: Vec<f64>) -> Result<Self> {
        Self::from_vectors(Variant::Constant, lambda, mu, 0.0)
    }

    pub fn immigration_at_zero(lambda: Vec<f64>, mu: Vec<f64>, nu: f64) -> Result<Self> {
        Self::from_vectors(Variant::ImmigrationAtZero, lambda, mu, nu)
    }

    pub fn immigration_everywhere(lambda: Vec<f64>, mu: Vec<f64>, nu: f64) -> Result<Self> {
        Self::from_vectors(Variant::ImmigrationEverywhere, lambda, mu, nu)
    }

    /// Parking lot with `capacity` spots; arrival sizes `1..=lambda.len()` and
    /// departure sizes `1..=mu.len()` must both be below the capacity.
    pub fn parking(lambda: Vec<f64>, mu: Vec<f64>, capacity: u32) -> Result<Self> {
        let mut spec = Self::from_vectors(Variant::Parking, lambda, mu, 0.0)?;
        if capacity == 0 {
            return Err(Error::domain("parking capacity must be positive"));
        }
        if spec.k1 >= capacity as usize || spec.k2 >= capacity as usize {
            return Err(Error::domain(format!(
                "parking requires K1 < K and K2 < K (K1={}, K2={}, K={capacity})",
                spec.k1, spec.k2
            )));
        }
        spec.capacity = Some(capacity);
        Ok(spec)
    }

    /// Sparse table of rates keyed by `(state, kind, size)`; missing entries
    /// are zero.
    pub fn table<I>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (State, EventKind, u32, f64)>,
    {
        let mut table = BTreeMap::new();
        let (mut k1, mut k2) = (0usize, 0usize);
        for (n, kind, size, rate) in entries {
            if n < 0 {
                return Err(Error::domain(format!("table state {n} is negative")));
            }
            if size == 0 {
                return Err(Error::domain("table event size must be positive"));
            }
            if !rate.is_finite() || rate < 0.0 {
                return Err(Error::domain(format!("table rate {rate} at n={n} is invalid")));
            }
            match kind {
                EventKind::Birth => k1 = k1.max(size as usize),
                EventKind::Death => k2 = k2.max(size as usize),
            }
            if table.insert((n, kind, size), rate).is_some() {
                return Err(Error::domain(format!(
                    "duplicate table entry for n={n}, {} of size {size}",
                    kind.as_str()
                )));
            }
        }
        if k1 == 0 || k2 == 0 {
            return Err(Error::domain(
                "table must declare at least one birth size and one death size",
            ));
        }
        Ok(ModelSpec {
            variant: Variant::GeneralTable,
            lambda: Vec::new(),
            mu: Vec::new(),
            nu: 0.0,
            capacity: None,
            table,
            lattice: Lattice::NonNegative,
            k1,
            k2,
        })
    }

    /// Switch the state space. [`Lattice::Integers`] is accepted for the
    /// constant-rate variant only.
    pub fn with_lattice(mut self, lattice: Lattice) -> Result<Self> {
        if lattice == Lattice::Integers && self.variant != Variant::Constant {
            return Err(Error::Unsupported(format!(
                "the integer lattice is only defined for constant rates, not {:?}",
                self.variant
            )));
        }
        self.lattice = lattice;
        Ok(self)
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn capacity(&self) -> Option<u32> {
        self.capacity
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    /// Largest birth size.
    pub fn k1(&self) -> usize {
        self.k1
    }

    /// Largest death size.
    pub fn k2(&self) -> usize {
        self.k2
    }

    pub fn table_entries(&self) -> impl Iterator<Item = (State, EventKind, u32, f64)> + '_ {
        self.table.iter().map(|(&(n, k, s), &r)| (n, k, s, r))
    }

    /// Whether `n` belongs to the state space.
    pub fn is_valid_state(&self, n: State) -> bool {
        match (self.lattice, self.capacity) {
            (Lattice::Integers, _) => true,
            (Lattice::NonNegative, Some(k)) => (0..=k as State).contains(&n),
            (Lattice::NonNegative, None) => n >= 0,
        }
    }

    fn check_state(&self, n: State) -> Result<()> {
        if self.is_valid_state(n) {
            Ok(())
        } else {
            Err(Error::domain(format!("state {n} is outside the state space")))
        }
    }

    /// Rate of a birth of size `i` from state `n`.
    pub fn birth_rate(&self, n: State, i: usize) -> Result<f64> {
        if i == 0 || i > self.k1 {
            return Err(Error::domain(format!("birth size {i} outside 1..={}", self.k1)));
        }
        self.check_state(n)?;
        Ok(self.birth_rate_unchecked(n, i))
    }

    /// Rate of a death of size `j` from state `n`.
    pub fn death_rate(&self, n: State, j: usize) -> Result<f64> {
        if j == 0 || j > self.k2 {
            return Err(Error::domain(format!("death size {j} outside 1..={}", self.k2)));
        }
        self.check_state(n)?;
        Ok(self.death_rate_unchecked(n, j))
    }

    /// Total exit rate from `n`, i.e. the parameter of the exponential sojourn.
    pub fn total_exit_rate(&self, n: State) -> Result<f64> {
        self.check_state(n)?;
        Ok(self.exit_rate_unchecked(n))
    }

    pub(crate) fn birth_rate_unchecked(&self, n: State, i: usize) -> f64 {
        let nf = n as f64;
        let li = || self.lambda[i - 1];
        match self.variant {
            Variant::Linear => nf * li(),
            Variant::Constant => li(),
            Variant::ImmigrationAtZero => {
                if n == 0 {
                    self.nu
                } else {
                    nf * li()
                }
            }
            Variant::ImmigrationEverywhere => self.nu + nf * li(),
            Variant::Parking => {
                let k = self.capacity.unwrap_or(0) as State;
                if n + i as State > k {
                    0.0
                } else {
                    (k - n) as f64 * li()
                }
            }
            Variant::GeneralTable => self
                .table
                .get(&(n, EventKind::Birth, i as u32))
                .copied()
                .unwrap_or(0.0),
        }
    }

    pub(crate) fn death_rate_unchecked(&self, n: State, j: usize) -> f64 {
        if self.lattice == Lattice::NonNegative && (j as State) > n {
            return 0.0;
        }
        let nf = n as f64;
        match self.variant {
            Variant::Linear
            | Variant::ImmigrationAtZero
            | Variant::ImmigrationEverywhere
            | Variant::Parking => nf * self.mu[j - 1],
            Variant::Constant => self.mu[j - 1],
            Variant::GeneralTable => self
                .table
                .get(&(n, EventKind::Death, j as u32))
                .copied()
                .unwrap_or(0.0),
        }
    }

    pub(crate) fn exit_rate_unchecked(&self, n: State) -> f64 {
        let births: f64 = (1..=self.k1).map(|i| self.birth_rate_unchecked(n, i)).sum();
        let deaths: f64 = (1..=self.k2).map(|j| self.death_rate_unchecked(n, j)).sum();
        births + deaths
    }

    /// Every event with positive rate at state `n`, with its rate.
    pub(crate) fn events_at(&self, n: State) -> impl Iterator<Item = (EventDescriptor, f64)> + '_ {
        let births = (1..=self.k1)
            .map(move |i| (EventDescriptor::birth(i as u32), self.birth_rate_unchecked(n, i)));
        let deaths = (1..=self.k2)
            .map(move |j| (EventDescriptor::death(j as u32), self.death_rate_unchecked(n, j)));
        births.chain(deaths).filter(|&(_, r)| r > 0.0)
    }

    /// True when some birth has positive rate at state 0.
    pub fn has_immigration_at_zero(&self) -> bool {
        self.is_valid_state(0) && (1..=self.k1).any(|i| self.birth_rate_unchecked(0, i) > 0.0)
    }

    pub fn derived_constants(&self) -> Result<DerivedConstants> {
        if self.variant == Variant::GeneralTable {
            return Err(Error::Unsupported(
                "derived constants are undefined for tabulated rates".into(),
            ));
        }
        let weighted = |v: &[f64], p: i32| -> f64 {
            v.iter()
                .enumerate()
                .map(|(k, &r)| ((k + 1) as f64).powi(p) * r)
                .sum()
        };
        let a1 = weighted(&self.lambda, 1);
        let a2 = weighted(&self.lambda, 2);
        let c1 = weighted(&self.mu, 1);
        let c2 = weighted(&self.mu, 2);
        Ok(DerivedConstants {
            eta: a1 - c1,
            zeta: a2 + c2,
            xi: a2 * c1 + a1 * c2,
            lambda_total: self.lambda.iter().sum::<f64>() + self.mu.iter().sum::<f64>(),
            beta: a1 + c1,
            birth_first: a1,
            birth_second: a2,
            death_first: c1,
            death_second: c2,
        })
    }

    pub(crate) fn require(&self, variants: &[Variant], what: &str) -> Result<()> {
        if variants.contains(&self.variant) {
            Ok(())
        } else {
            Err(Error::Unsupported(format!(
                "{what} is not defined for the {:?} variant",
                self.variant
            )))
        }
    }

    /// Parse the JSON model format used by the command-line tool.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::domain(format!("model file: {e}")))?;
        file.into_spec()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelFile::from_spec(self)).expect("model serializes")
    }
}

/// On-disk JSON representation of a [`ModelSpec`].
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lambda: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mu: Vec<f64>,
    #[serde(default)]
    pub nu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<CapacityFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub table: Vec<TableEntryFile>,
    #[serde(default, skip_serializing_if = "is_default_lattice")]
    pub lattice: Lattice,
}

fn is_default_lattice(l: &Lattice) -> bool {
    *l == Lattice::NonNegative
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacityFile {
    #[serde(rename = "K")]
    pub k: u32,
    #[serde(rename = "K1", default, skip_serializing_if = "Option::is_none")]
    pub k1: Option<u32>,
    #[serde(rename = "K2", default, skip_serializing_if = "Option::is_none")]
    pub k2: Option<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableEntryFile {
    pub n: State,
    pub kind: EventKind,
    pub size: u32,
    pub rate: f64,
}

impl ModelFile {
    fn into_spec(self) -> Result<ModelSpec> {
        let spec = match self.variant {
            Variant::Linear => ModelSpec::linear(self.lambda, self.mu)?,
            Variant::Constant => ModelSpec::constant(self.lambda, self.mu)?,
            Variant::ImmigrationAtZero => ModelSpec::immigration_at_zero(self.lambda, self.mu, self.nu)?,
            Variant::ImmigrationEverywhere => {
                ModelSpec::immigration_everywhere(self.lambda, self.mu, self.nu)?
            }
            Variant::Parking => {
                let cap = self
                    .capacity
                    .ok_or_else(|| Error::domain("parking model needs a capacity block"))?;
                if cap.k1.is_some_and(|k1| k1 as usize != self.lambda.len()) {
                    return Err(Error::domain("capacity.K1 must equal the length of lambda"));
                }
                if cap.k2.is_some_and(|k2| k2 as usize != self.mu.len()) {
                    return Err(Error::domain("capacity.K2 must equal the length of mu"));
                }
                ModelSpec::parking(self.lambda, self.mu, cap.k)?
            }
            Variant::GeneralTable => ModelSpec::table(
                self.table.into_iter().map(|e| (e.n, e.kind, e.size, e.rate)),
            )?,
        };
        spec.with_lattice(self.lattice)
    }

    fn from_spec(spec: &ModelSpec) -> Self {
        ModelFile {
            variant: spec.variant,
            lambda: spec.lambda.clone(),
            mu: spec.mu.clone(),
            nu: spec.nu,
            capacity: spec.capacity.map(|k| CapacityFile {
                k,
                k1: Some(spec.k1 as u32),
                k2: Some(spec.k2 as u32),
            }),
            table: spec
                .table_entries()
                .map(|(n, kind, size, rate)| TableEntryFile { n, kind, size, rate })
                .collect(),
            lattice: spec.lattice,
        }
    }
}
