//! Network-coupled time stepping: per-step voltage profiles are fitted by
//! Gauss-Newton so that component currents predicted by the networks balance
//! the network currents at a set of query points.

mod assembly;
mod gauss_newton;
mod predictor;
mod simulate;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use assembly::{jacobian, jacobian_block_pattern, residual, ResidualAssembly, Stepper};
pub use predictor::{ComponentPredictor, OraclePredictor};
pub use gauss_newton::{gauss_newton_update, GaussNewtonUpdate, MAX_DAMPING};
pub use simulate::{
    center_of_inertia_speed, init_profile, simulate, step, write_diagnostics, PinnSimulation, StepResult, DIAGNOSTICS_SCHEMA,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepConfig {
    pub dt: f64,
    /// Query points per step.
    pub s: usize,
    /// Order of the voltage polynomials.
    pub r: usize,
    /// Stop once the infinity norm of the coefficient update is at most this.
    pub xi_tol: f64,
    pub k_max: usize,
    /// Levenberg damping added to the normal equations.
    pub damping: f64,
    pub init: ProfileInit,
}

/// How the coefficients are initialized at the start of a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileInit {
    /// Constant at the current bus voltages.
    #[default]
    Flat,
    /// As `Flat`, with every angle rotating at the inertia-weighted mean
    /// machine speed.
    Rotating,
    /// The previous step's polynomials re-expressed at the new origin
    /// (`Flat` on the first step).
    Warm,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self { dt: 0.05, s: 3, r: 2, xi_tol: 1e-8, k_max: 20, damping: 0.0, init: ProfileInit::Flat }
    }
}

impl StepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("step size must be positive, got {}", self.dt)));
        }
        if self.s == 0 || self.k_max == 0 {
            return Err(Error::InvalidParameter("query-point count and iteration cap must be at least 1".into()));
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(Error::InvalidParameter(format!("damping must be non-negative, got {}", self.damping)));
        }
        if !(self.xi_tol > 0.0) {
            return Err(Error::InvalidParameter(format!("coefficient tolerance must be positive, got {}", self.xi_tol)));
        }
        if self.s < self.r + 1 {
            log::warn!("s = {} < r + 1 = {}: the least-squares problem is underdetermined", self.s, self.r + 1);
        }
        Ok(())
    }
}

/// Midpoints of `s` equal subintervals of `[t0, t0 + dt]`.
pub fn query_points(t0: f64, dt: f64, s: usize) -> Vec<f64> {
    (1..=s).map(|j| t0 + (j as f64 - 0.5) * dt / s as f64).collect()
}

/// Midpoint-rule integral of `g` over `[t0, t0 + dt]` with `s` subintervals.
pub fn midpoint_integral(t0: f64, dt: f64, s: usize, g: impl Fn(f64) -> f64) -> f64 {
    dt / s as f64 * query_points(t0, dt, s).into_iter().map(g).sum::<f64>()
}

/// Midpoint approximation of the integrated squared current mismatch from
/// the stacked residual.
pub fn objective(rho: &[f64], dt: f64, s: usize) -> f64 {
    dt / s as f64 * rho.iter().map(|r| r * r).sum::<f64>()
}

#[cfg(test)]
mod tests;
