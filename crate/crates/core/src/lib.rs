//! Simulation and certification toolkit for PI control with a saturating
//! integrator.
//!
//! * [`control`]: plant/controller types and the pointwise closed-loop field.
//! * [`sim`]: event-aware fixed-step simulation and trajectory export.
//! * [`plants`]: the two-state example plant, linear plants, `B_eta`.
//! * [`analysis`]: equilibrium continuation, stability and monotonicity
//!   checks, reduced model, Lyapunov monitors, gain probe.
//! * [`certify`]: gain, dwell-time, global-convergence and windup campaigns.

pub mod analysis;
pub mod certify;
pub mod commands;
pub mod config;
pub mod control;
mod error;
pub mod plants;
pub mod sim;

pub use control::{closed_loop_rhs, sat_rate, ClosedLoopState, ControllerConfig, LoopRates, Plant, Reference};
pub use error::{Error, Result};
pub use sim::{simulate, SimConfig, Trajectory};
