//! Single steps and chained simulation.

use std::io::Write;

use num_complex::Complex64;

use super::gauss_newton::gauss_newton_update;
use super::predictor::ComponentPredictor;
use super::{objective, ProfileInit, StepConfig, Stepper};
use crate::baselines::step_count;
use crate::error::Result;
use crate::models::PowerSystem;
use crate::pinn::PinnWeights;
use crate::trajectory::{fmt_f64, Trajectory, TrajectorySample};
use crate::voltage::SystemProfile;

pub const DIAGNOSTICS_SCHEMA: &str = "pinnsim-step-diagnostics/1";

/// Outcome of one step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub t0: f64,
    pub dt: f64,
    /// Machine states at `t0`.
    pub x0: Vec<Vec<f64>>,
    pub xi_final: SystemProfile,
    pub x_end: Vec<Vec<f64>>,
    pub v_end: Vec<Complex64>,
    /// Coefficient updates performed.
    pub iterations: usize,
    /// Objective at the initial profile and after every update.
    pub objective_history: Vec<f64>,
    /// Infinity norm of each update.
    pub delta_norms: Vec<f64>,
    pub converged: bool,
    /// Largest damping used by any update.
    pub damping: f64,
}

impl StepResult {
    pub fn objective(&self) -> f64 {
        *self.objective_history.last().expect("at least the initial objective")
    }

    /// Machine states and bus voltages at `t` in `[t0, t0 + dt]`.
    pub fn dense<P: ComponentPredictor>(&self, stepper: &Stepper<P>, t: f64) -> Result<(Vec<Vec<f64>>, Vec<Complex64>)> {
        Ok((stepper.states_at(t, &self.x0, &self.xi_final)?, self.xi_final.eval(t)))
    }
}

/// Inertia-weighted mean speed deviation of all machines.
pub fn center_of_inertia_speed(system: &PowerSystem, x: &[Vec<f64>]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (m, xm) in system.machines.iter().zip(x) {
        num += m.params.h * xm[m.speed_index()];
        den += m.params.h;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Initial profile for a step starting at `t0`: constant at the bus voltages
/// `v`, or the previous step's polynomials re-expressed around `t0`.
pub fn init_profile(t0: f64, r: usize, v: &[Complex64], previous: Option<&SystemProfile>) -> SystemProfile {
    match previous {
        Some(p) => {
            let shifted = p.reanchor(t0);
            SystemProfile {
                t0,
                order: r,
                profiles: shifted.profiles.iter().map(|b| b.with_order(r)).collect(),
            }
        }
        None => SystemProfile::flat(t0, v, r),
    }
}

impl<P: ComponentPredictor> Stepper<'_, P> {
    /// One step of length `cfg.dt` (or `dt` when given).
    pub fn step(
        &self,
        t0: f64,
        x0: &[Vec<f64>],
        v0: &[Complex64],
        previous: Option<&SystemProfile>,
        dt: Option<f64>,
    ) -> Result<StepResult> {
        let dt = dt.unwrap_or(self.cfg.dt);
        let s = self.cfg.s;
        let mut xi = match self.cfg.init {
            ProfileInit::Flat => init_profile(t0, self.cfg.r, v0, None),
            ProfileInit::Warm => init_profile(t0, self.cfg.r, v0, previous),
            ProfileInit::Rotating => {
                let mut p = init_profile(t0, self.cfg.r, v0, None);
                if self.cfg.r >= 1 {
                    let rate = self.system.machines.first().map_or(0.0, |m| m.params.omega_s)
                        * center_of_inertia_speed(self.system, x0);
                    p.profiles.iter_mut().for_each(|b| b.angle[1] = rate);
                }
                p
            }
        };
        let n = self.system.n_buses();
        let mut history = Vec::new();
        let mut norms = Vec::new();
        let mut converged = false;
        let mut damping = self.cfg.damping;
        let mut packed = xi.pack();
        for _ in 0..self.cfg.k_max {
            let asm = self.assemble_for(x0, &xi, dt)?;
            history.push(objective(&asm.rho, dt, s));
            let upd = gauss_newton_update(&asm.jacobian, &asm.rho, self.cfg.damping)?;
            damping = damping.max(upd.damping);
            for (a, d) in packed.iter_mut().zip(&upd.delta) {
                *a += d;
            }
            xi = crate::voltage::unpack(&packed, n, self.cfg.r, t0)?;
            let norm = upd.delta.iter().fold(0.0f64, |m, d| m.max(d.abs()));
            norms.push(norm);
            if norm <= self.cfg.xi_tol {
                converged = true;
                break;
            }
        }
        history.push(objective(&self.residual_for(x0, &xi, dt)?, dt, s));
        if !converged {
            log::warn!("step at t = {t0} did not converge in {} iterations", self.cfg.k_max);
        }
        let x_end = self.states_at(t0 + dt, x0, &xi)?;
        let v_end = xi.eval(t0 + dt);
        Ok(StepResult {
            t0,
            dt,
            x0: x0.to_vec(),
            xi_final: xi,
            x_end,
            v_end,
            iterations: norms.len(),
            objective_history: history,
            delta_norms: norms,
            converged,
            damping,
        })
    }

    /// Chains steps from `(x0, v0)` at `t = 0` up to `t_max`. A step failure
    /// ends the run; the trajectory then carries the failure message.
    pub fn simulate(&self, x0: &[Vec<f64>], v0: &[Complex64], t_max: f64) -> PinnSimulation {
        let mut traj = Trajectory::new(self.system);
        traj.samples.push(TrajectorySample { t: 0.0, x: x0.to_vec(), v: v0.to_vec() });
        let (n_full, rem) = step_count(t_max, self.cfg.dt);
        let mut steps: Vec<StepResult> = Vec::with_capacity(n_full + 1);
        let (mut x, mut v) = (x0.to_vec(), v0.to_vec());
        let n_steps = n_full + usize::from(rem > 0.0);
        for k in 0..n_steps {
            let t0 = k as f64 * self.cfg.dt;
            let dt = if k < n_full { self.cfg.dt } else { rem };
            match self.step(t0, &x, &v, steps.last().map(|s| &s.xi_final), Some(dt)) {
                Ok(res) => {
                    x = res.x_end.clone();
                    v = res.v_end.clone();
                    traj.samples.push(TrajectorySample { t: t0 + dt, x: x.clone(), v: v.clone() });
                    steps.push(res);
                }
                Err(e) => {
                    traj.failure = Some(format!("step at t = {t0} failed: {e}"));
                    break;
                }
            }
        }
        traj.partial_final_step = rem > 0.0 && traj.failure.is_none();
        PinnSimulation { trajectory: traj, steps }
    }
}

/// Boundary samples plus the per-step results that provide dense output.
#[derive(Debug, Clone)]
pub struct PinnSimulation {
    pub trajectory: Trajectory,
    pub steps: Vec<StepResult>,
}

impl PinnSimulation {
    pub fn all_converged(&self) -> bool {
        self.steps.iter().all(|s| s.converged)
    }

    /// Step containing `t`.
    pub fn step_at(&self, t: f64) -> Option<&StepResult> {
        self.steps.iter().find(|s| t >= s.t0 - 1e-12 && t <= s.t0 + s.dt + 1e-12)
    }
}

/// One step from `(x0_all, v0)` at `t0`.
pub fn step(
    system: &PowerSystem,
    t0: f64,
    x0_all: &[Vec<f64>],
    v0: &[Complex64],
    cfg: &StepConfig,
    weights_all: &[PinnWeights],
) -> Result<StepResult> {
    Stepper::new(system, weights_all, cfg.clone())?.step(t0, x0_all, v0, None, None)
}

pub fn simulate(
    system: &PowerSystem,
    x0_all: &[Vec<f64>],
    v0: &[Complex64],
    t_max: f64,
    cfg: &StepConfig,
    weights_all: &[PinnWeights],
) -> Result<PinnSimulation> {
    Ok(Stepper::new(system, weights_all, cfg.clone())?.simulate(x0_all, v0, t_max))
}

/// Per-iteration convergence record: `step,iteration,objective,delta_xi_inf_norm`.
/// Iteration 0 is the initial profile and has no update norm.
pub fn write_diagnostics<W: Write>(steps: &[StepResult], mut w: W) -> Result<()> {
    writeln!(w, "# schema: {DIAGNOSTICS_SCHEMA}")?;
    writeln!(w, "step,iteration,objective,delta_xi_inf_norm")?;
    for (k, s) in steps.iter().enumerate() {
        for (it, obj) in s.objective_history.iter().enumerate() {
            let d = if it == 0 { String::new() } else { fmt_f64(s.delta_norms[it - 1]) };
            writeln!(w, "{k},{it},{},{d}", fmt_f64(*obj))?;
        }
    }
    Ok(())
}
