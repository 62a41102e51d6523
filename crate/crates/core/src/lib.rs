//! Spectral simulation of the stochastically forced viscous Burgers equation
//! on `(0, π)` with Dirichlet boundary conditions, together with the
//! statistical measures, controllability search and experiment drivers built
//! on it.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod forcing;
pub mod measures;
pub mod parallel;
pub mod report;
pub mod rng;
pub mod runner;
pub mod snapshot;
pub mod spectral;

pub use dynamics::{
    simulate, simulate_controlled, simulate_split, steady_state, ControlSchedule, NonlinearForm, SimConfig, Trajectory,
};
pub use error::{Error, Result};
pub use forcing::{sample_noise, ForcingBasis, NoisePath};
pub use parallel::Workers;
pub use rng::SeedLineage;
pub use spectral::{norm, NormTag, SpectralState};
