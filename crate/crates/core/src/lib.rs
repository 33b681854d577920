//! Power-system transient simulation with per-component physics-informed
//! neural networks coupled through power-series voltage profiles.

pub mod baselines;
pub mod error;
pub mod harness;
pub mod models;
pub mod pinn;
pub mod stepper;
pub mod trajectory;
pub mod voltage;

pub use error::{Error, Result};
