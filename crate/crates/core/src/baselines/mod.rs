//! Conventional integrators used for comparison and as accuracy oracles.

mod reference;
mod single;
mod trapezoidal;

pub use reference::{
    integrate_to_times, reference_simulate, uniform_times, ReferenceOptions, REFERENCE_DT, REFERENCE_TOL,
};
pub(crate) use trapezoidal::step_count;
pub use single::{single_component_solve, SINGLE_COMPONENT_DT};
pub use trapezoidal::{
    simulate_trapezoidal, trapezoidal_step, trapezoidal_step_with, DaeJacobian, DaeModel, DaeState, NewtonOptions,
    NEWTON_MAX_ITER, NEWTON_TOL,
};
