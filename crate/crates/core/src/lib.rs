//! Simulation of dynamic loop self-scheduling on perturbed heterogeneous
//! platforms, with an optional controller that re-selects the technique
//! during execution by simulating every candidate from the current state.

pub mod error;
pub mod harness;
pub mod platform;
pub mod rng;
pub mod sched;
pub mod sil;
pub mod simengine;
pub mod workload;

pub use error::{Error, Result};
