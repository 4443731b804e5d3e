//! Generalized birth-death processes: simulation, transient solvers, closed
//! forms, moments, extinction analysis and rate estimation.

pub mod chisq;
pub mod closedform;
pub mod error;
pub mod estimate;
pub mod extinction;
pub mod io;
pub mod kolmogorov;
pub mod lattice;
pub mod model;
pub mod moments;
pub mod ode;
pub mod rng;
pub mod roots;
pub mod simulate;
pub mod special;

pub use error::{Error, Result};
pub use model::{DerivedConstants, EventDescriptor, EventKind, Lattice, ModelSpec, State, Variant};
