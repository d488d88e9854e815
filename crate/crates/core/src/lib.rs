//! Parallel-in-time (parareal) integration of Langevin dynamics.
//!
//! The fine and coarse propagators are the same window-restarted BBK
//! integrator applied to two potentials. Every window draws its noise from a
//! counter-based stream keyed by the window seed, so both propagators, every
//! iteration and the sequential reference see identical variates.

pub mod accounting;
pub mod analysis;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod integrator;
pub mod model;
pub mod parareal;
pub mod potentials;
pub mod rng;

pub use error::{Error, Result};
pub use integrator::{propagate_window, TemperatureSchedule};
pub use model::{LangevinParams, NodeTrajectory, PhaseState};
pub use parareal::{Parareal, PararealConfig, PararealResult, Propagator};
pub use potentials::{Potential, PropagatorPair};
pub use rng::NoisePlan;
