//! Per-iteration objective of single steps from one disturbed state.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{load_networks, write_table, ExperimentConfig};
use crate::baselines::{reference_simulate, ReferenceOptions};
use crate::error::{Error, Result};
use crate::stepper::Stepper;
use crate::trajectory::fmt_f64;

pub const CONVERGENCE_SCHEMA: &str = "pinnsim-convergence/1";
pub const CONVERGENCE_SUMMARY_SCHEMA: &str = "pinnsim-convergence-summary/1";

/// Objective changes below this fraction of the initial objective count as round-off.
const ROUNDOFF: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct ConvergenceRun {
    pub r: usize,
    pub s: usize,
    pub dt: f64,
    pub objective_history: Vec<f64>,
    pub delta_norms: Vec<f64>,
    pub converged: bool,
    /// First iteration whose objective is within the plateau tolerance of the final one.
    pub plateau_iteration: usize,
    pub monotone: bool,
    /// Set when the step failed; the history is then empty.
    pub failure: Option<String>,
}

impl ConvergenceRun {
    pub fn final_objective(&self) -> f64 {
        self.objective_history.last().copied().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone)]
pub struct ConvergenceResult {
    pub start_time: f64,
    pub runs: Vec<ConvergenceRun>,
}

impl ConvergenceResult {
    pub fn run(&self, r: usize, s: usize, dt: f64) -> Option<&ConvergenceRun> {
        self.runs.iter().find(|x| x.r == r && x.s == s && (x.dt - dt).abs() < 1e-12)
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut detail = Vec::new();
        for run in &self.runs {
            for (k, obj) in run.objective_history.iter().enumerate() {
                let d = if k == 0 { String::new() } else { fmt_f64(run.delta_norms[k - 1]) };
                detail.push(format!("{},{},{},{k},{},{d}", run.r, run.s, fmt_f64(run.dt), fmt_f64(*obj)));
            }
        }
        let summary: Vec<String> = self
            .runs
            .iter()
            .map(|run| {
                format!(
                    "{},{},{},{},{},{},{},{},{}",
                    run.r,
                    run.s,
                    fmt_f64(run.dt),
                    run.delta_norms.len(),
                    run.converged,
                    fmt_f64(run.final_objective()),
                    run.plateau_iteration,
                    run.monotone,
                    run.failure.as_deref().unwrap_or("").replace(',', ";")
                )
            })
            .collect();
        let a = dir.join("convergence.csv");
        write_table(&a, CONVERGENCE_SCHEMA, "r,s,dt,iteration,objective,delta_xi_inf_norm", &detail)?;
        let b = dir.join("convergence_summary.csv");
        write_table(
            &b,
            CONVERGENCE_SUMMARY_SCHEMA,
            "r,s,dt,iterations,converged,final_objective,plateau_iteration,monotone,failure",
            &summary,
        )?;
        Ok(vec![a, b])
    }
}

/// Non-increasing up to round-off relative to the first value.
pub fn is_monotone(history: &[f64]) -> bool {
    let floor = ROUNDOFF * history.first().copied().unwrap_or(0.0);
    history.windows(2).all(|w| w[1] <= w[0] + floor)
}

/// First index whose value is within `rtol` (relative to the final value,
/// plus round-off) of the final value.
pub fn plateau_iteration(history: &[f64], rtol: f64) -> usize {
    let Some(&last) = history.last() else { return 0 };
    let tol = rtol * last.abs() + ROUNDOFF * history[0].abs();
    history.iter().position(|&j| (j - last).abs() <= tol).unwrap_or(history.len() - 1)
}

pub fn run_convergence(cfg: &ExperimentConfig) -> Result<ConvergenceResult> {
    let sc = cfg.scenario()?;
    let sys = &sc.disturbed;
    let eq = &sc.equilibrium;
    let (x0, v0) = if cfg.start_time > 0.0 {
        let reference = reference_simulate(sys, &eq.x0, &eq.v0, &[cfg.start_time], &ReferenceOptions::default())?;
        let s = reference.last().ok_or_else(|| Error::InvalidParameter("empty reference".into()))?;
        (s.x.clone(), s.v.clone())
    } else {
        (eq.x0.clone(), eq.v0.clone())
    };
    let networks = cfg.solvers.iter().map(|s| load_networks(cfg, sys, s.r)).collect::<Result<Vec<_>>>()?;
    let cells: Vec<(usize, f64)> =
        (0..cfg.solvers.len()).flat_map(|k| cfg.dt_grid.iter().map(move |&dt| (k, dt))).collect();
    let runs = cells
        .par_iter()
        .map(|&(k, dt)| -> Result<ConvergenceRun> {
            let setting = cfg.solvers[k];
            let stepper = Stepper::new(sys, &networks[k], cfg.step_config(setting, dt))?;
            let res = match stepper.step(cfg.start_time, &x0, &v0, None, None) {
                Ok(res) => res,
                Err(e) => {
                    log::warn!("{} at dt = {dt} failed: {e}", setting.label());
                    return Ok(ConvergenceRun {
                        r: setting.r,
                        s: setting.s,
                        dt,
                        objective_history: Vec::new(),
                        delta_norms: Vec::new(),
                        converged: false,
                        plateau_iteration: 0,
                        monotone: false,
                        failure: Some(e.to_string()),
                    });
                }
            };
            Ok(ConvergenceRun {
                r: setting.r,
                s: setting.s,
                dt,
                plateau_iteration: plateau_iteration(&res.objective_history, cfg.plateau_rtol),
                monotone: is_monotone(&res.objective_history),
                objective_history: res.objective_history,
                delta_norms: res.delta_norms,
                converged: res.converged,
                failure: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceResult { start_time: cfg.start_time, runs })
}
