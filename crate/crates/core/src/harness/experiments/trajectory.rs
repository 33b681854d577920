//! Full trajectories over a step-size grid against the reference.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{hz, inputs_outside_box, load_networks, max_speed_error_hz, tag, write_table, write_trajectory, ExperimentConfig};
use crate::baselines::{reference_simulate, simulate_trapezoidal, uniform_times, ReferenceOptions};
use crate::error::Result;
use crate::stepper::Stepper;
use crate::trajectory::{fmt_f64, Trajectory};

pub const TRAJECTORY_SUMMARY_SCHEMA: &str = "pinnsim-trajectory-summary/1";

#[derive(Debug, Clone)]
pub struct TrajectoryRow {
    pub dt: f64,
    /// `trapezoidal` or `pinnsim-r<r>-s<s>`.
    pub method: String,
    /// Over the samples produced before any failure.
    pub max_error_hz: f64,
    pub steps: usize,
    pub nonconverged_steps: usize,
    pub gn_iterations: usize,
    /// PINNSim steps with at least one network input outside its training box.
    pub steps_outside_box: usize,
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TrajectoryResult {
    pub reference: Trajectory,
    /// Peak-to-peak speed variation of the observed machine in the reference, Hz.
    pub reference_peak_to_peak_hz: f64,
    pub rows: Vec<TrajectoryRow>,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryResult {
    pub fn row(&self, method: &str, dt: f64) -> Option<&TrajectoryRow> {
        self.rows.iter().find(|r| r.method == method && (r.dt - dt).abs() < 1e-12)
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut files = Vec::new();
        let p = dir.join("reference.csv");
        write_trajectory(&p, &self.reference)?;
        files.push(p);
        for (row, traj) in self.rows.iter().zip(&self.trajectories) {
            let p = dir.join(format!("trajectory_{}_dt{}.csv", row.method, tag(row.dt)));
            write_trajectory(&p, traj)?;
            files.push(p);
        }
        let rows: Vec<String> = self
            .rows
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{},{},{},{}",
                    fmt_f64(r.dt),
                    r.method,
                    fmt_f64(r.max_error_hz),
                    r.steps,
                    r.nonconverged_steps,
                    r.gn_iterations,
                    r.steps_outside_box,
                    r.failure.as_deref().unwrap_or("").replace(',', ";")
                )
            })
            .collect();
        let p = dir.join("summary.csv");
        write_table(
            &p,
            TRAJECTORY_SUMMARY_SCHEMA,
            "dt,method,max_error_hz,steps,nonconverged_steps,gn_iterations,steps_outside_box,failure",
            &rows,
        )?;
        files.push(p);
        Ok(files)
    }
}

pub fn run_trajectory_experiment(cfg: &ExperimentConfig) -> Result<TrajectoryResult> {
    let sc = cfg.scenario()?;
    let sys = &sc.disturbed;
    let eq = &sc.equilibrium;
    let observed = cfg.observed(sys)?;
    let times = uniform_times(cfg.t_max, cfg.reference_interval);
    let reference = reference_simulate(sys, &eq.x0, &eq.v0, &times, &ReferenceOptions::default())?;
    let speeds = reference.speed(observed);
    let (lo, hi) = speeds.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let networks = cfg.solvers.iter().map(|s| load_networks(cfg, sys, s.r)).collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::new();
    for &dt in &cfg.dt_grid {
        cells.push((dt, None));
        for k in 0..cfg.solvers.len() {
            cells.push((dt, Some(k)));
        }
    }
    let results = cells
        .par_iter()
        .map(|&(dt, solver)| -> Result<(TrajectoryRow, Trajectory)> {
            match solver {
                None => {
                    let traj = simulate_trapezoidal(sys, &eq.x0, &eq.v0, cfg.t_max, dt)?;
                    let row = TrajectoryRow {
                        dt,
                        method: "trapezoidal".into(),
                        max_error_hz: max_speed_error_hz(sys, &traj, &reference, observed)?,
                        steps: traj.samples.len() - 1,
                        nonconverged_steps: 0,
                        gn_iterations: 0,
                        steps_outside_box: 0,
                        failure: traj.failure.clone(),
                    };
                    Ok((row, traj))
                }
                Some(k) => {
                    let setting = cfg.solvers[k];
                    let stepper = Stepper::new(sys, &networks[k], cfg.step_config(setting, dt))?;
                    let sim = stepper.simulate(&eq.x0, &eq.v0, cfg.t_max);
                    let outside = sim.steps.iter().filter(|s| inputs_outside_box(&stepper, &s.x0, &s.xi_final) > 0).count();
                    let row = TrajectoryRow {
                        dt,
                        method: setting.label(),
                        max_error_hz: max_speed_error_hz(sys, &sim.trajectory, &reference, observed)?,
                        steps: sim.steps.len(),
                        nonconverged_steps: sim.steps.iter().filter(|s| !s.converged).count(),
                        gn_iterations: sim.steps.iter().map(|s| s.iterations).sum(),
                        steps_outside_box: outside,
                        failure: sim.trajectory.failure.clone(),
                    };
                    if outside > 0 {
                        log::warn!("{} at dt = {dt}: {outside} steps left the training box", row.method);
                    }
                    Ok((row, sim.trajectory))
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let (rows, trajectories) = results.into_iter().unzip();
    Ok(TrajectoryResult { reference_peak_to_peak_hz: hz(sys, hi - lo), reference, rows, trajectories })
}
