//! Onsager–Machlup actions, simulation and density solvers for
//! jump-diffusions with state-dependent jump intensity.

pub mod expr;
pub mod grid;
pub mod infinite;
pub mod levy_fpe;
pub mod map_solver;
pub mod models;
pub mod om;
pub mod prob_flow;
pub mod quad;
pub mod sde_sim;
pub mod stats;
pub mod tube;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
