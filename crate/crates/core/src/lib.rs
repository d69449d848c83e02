//! Discounted economic model predictive control without terminal
//! conditions.
//!
//! The crate covers the full experimental loop for receding-horizon
//! control of systems whose best long-run behavior is a periodic orbit:
//! finite-horizon optimal control with constant or linearly decaying stage
//! weights ([`ocp`]), optimal periodic orbits and period scans ([`orbit`]),
//! the receding-horizon controllers themselves ([`mpc`]), closed-loop
//! simulation ([`simulate`]), and the performance metrics and structural
//! identity checks used to validate everything ([`metrics`]). Three
//! ready-made example systems live in [`presets`] and can also be built
//! from TOML configs ([`config`]).

pub mod config;
pub mod discount;
pub mod error;
pub mod metrics;
pub mod model;
pub mod mpc;
mod nlp;
pub mod ocp;
pub mod orbit;
pub mod presets;
pub mod simulate;

pub use discount::DiscountProfile;
pub use error::{Error, Result};
pub use model::{Input, State, SystemModel, Trajectory};
pub use ocp::{OcpSolution, OcpSpec, SolveStatus, SolverOptions};
pub use orbit::PeriodicOrbit;
pub use simulate::ClosedLoopTrace;
