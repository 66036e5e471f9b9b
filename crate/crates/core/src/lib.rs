//! Monte Carlo kernel for the stochastic front equation
//!
//! ```text
//! d_t u = 1/2 d_x^2 u + f(u) + sigma sqrt(u (1 - u)) W'(t, x)
//! ```
//!
//! and the estimators built on it: front speed, stationary constants of the
//! voter interface, diffusive scaling of the interface functionals, Girsanov
//! reweighting, and the exact rescaling between noise strength and drift size.

pub mod error;
pub mod estimators;
pub mod field;
pub mod girsanov;
pub mod integrator;
pub mod noise;
pub mod nonlinearity;
pub mod replicas;
pub mod scaling;
pub mod stats;

pub use error::{Error, Result};
pub use field::{EdgePair, FrontState, Side};
pub use integrator::{
    Control, Frame, FunctionalAccumulators, Model, ObservationLog, ObservationRecord, RunCheckpoint, SimParams,
    Simulation,
};
pub use noise::NoiseStream;
pub use nonlinearity::{NonlinearityKind, NonlinearitySpec};
