//! Automated construction of effective (coarse-grained) potentials.
//!
//! A multiscale potential `V` is integrated with a deliberately large step by a
//! damped Störmer–Verlet scheme. Scales finer than the step behave like thermal
//! noise, so the long-run samples follow a Gibbs law of the coarse part of `V`.
//! This crate provides the pieces of that pipeline:
//!
//! * [`potentials`]: the oracle abstraction and the built-in multiscale test potentials.
//! * [`integrators`]: damped Verlet, leapfrog and kinetic Langevin steppers.
//! * [`covariance`]: mass-matrix probing to estimate the effective noise covariance
//!   and calibrate the friction matrix.
//! * [`equilibrium`]: normality gate, inverse temperature, histograms and the
//!   log-density regression producing a [`FittedPotential`].
//! * [`surrogate`]: ensembles driven by fitted or full potentials and the
//!   mean-path / autocorrelation / equilibrium diagnostics used to compare them.

pub mod covariance;
pub mod equilibrium;
mod error;
pub mod integrators;
pub mod linalg;
pub mod potentials;
pub mod rng;
pub mod surrogate;

pub use covariance::{CovarianceEstimate, ProbePlan};
pub use equilibrium::{FittedPotential, Histogram, NormalityReport, SampleSet};
pub use error::{Error, Result};
pub use integrators::{SimConfig, State};
pub use potentials::{BuiltinKind, BuiltinSpec, Potential};
pub use surrogate::{DiagnosticsReport, EnsembleConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
