//! Verified fine-step reference trajectories.

use num_complex::Complex64;

use super::trapezoidal::{trapezoidal_step_with, DaeModel, NewtonOptions};
use crate::error::{Error, Result};
use crate::models::PowerSystem;
use crate::trajectory::Trajectory;

pub const REFERENCE_DT: f64 = 1e-4;
/// Largest admissible change of any sampled speed deviation (pu) when the
/// reference step is halved.
pub const REFERENCE_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy)]
pub struct ReferenceOptions {
    pub dt: f64,
    pub tol: f64,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        Self { dt: REFERENCE_DT, tol: REFERENCE_TOL }
    }
}

/// Trapezoidal integration sampled at `times` (ascending, starting at or
/// after 0). Each interval between samples is split into equal steps no
/// longer than `dt`.
pub fn integrate_to_times(
    system: &PowerSystem,
    x0: &[Vec<f64>],
    v0: &[Complex64],
    times: &[f64],
    dt: f64,
) -> Result<Trajectory> {
    system.check_dims(x0, v0)?;
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("step size must be positive, got {dt}")));
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::InvalidParameter("sample times must be ascending and non-negative".into()));
    }
    let opts = NewtonOptions::default();
    let mut traj = Trajectory::new(system);
    let mut state = system.dae_state(0.0, x0, v0);
    let mut f0 = system.f(&state.x, &state.y)?;
    for &target in times {
        let span = target - state.t;
        let n = (span / dt - 1e-9).ceil().max(0.0) as usize;
        if n > 0 {
            let h = span / n as f64;
            for k in 0..n {
                state = trapezoidal_step_with(system, &state, h, Some(&f0), &opts)?;
                if k + 1 == n {
                    state.t = target;
                }
                f0 = system.f(&state.x, &state.y)?;
            }
        }
        traj.samples.push(system.sample(&state));
    }
    Ok(traj)
}

/// Reference trajectory at `times`. The run at `opts.dt` is repeated with
/// half the step; the half-step result is returned if no sampled speed
/// deviation moved by more than `opts.tol`.
pub fn reference_simulate(
    system: &PowerSystem,
    x0: &[Vec<f64>],
    v0: &[Complex64],
    times: &[f64],
    opts: &ReferenceOptions,
) -> Result<Trajectory> {
    let coarse = integrate_to_times(system, x0, v0, times, opts.dt)?;
    let fine = integrate_to_times(system, x0, v0, times, 0.5 * opts.dt)?;
    let mut worst: f64 = 0.0;
    for m in 0..system.machines.len() {
        for (a, b) in coarse.speed(m).iter().zip(fine.speed(m)) {
            worst = worst.max((a - b).abs());
        }
    }
    if !(worst < opts.tol) {
        return Err(Error::Verification(format!(
            "halving the reference step changed a speed deviation by {worst:e} pu (limit {:e})",
            opts.tol
        )));
    }
    Ok(fine)
}

/// Evenly spaced sample times `0, step, ..., t_max`.
pub fn uniform_times(t_max: f64, step: f64) -> Vec<f64> {
    let n = (t_max / step + 1e-9).floor() as usize;
    (0..=n).map(|k| k as f64 * step).collect()
}
