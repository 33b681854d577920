//! Single steps from many states of the reference trajectory.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{hz, inputs_outside_box, load_networks, write_table, ExperimentConfig};
use crate::baselines::{reference_simulate, simulate_trapezoidal, uniform_times, ReferenceOptions};
use crate::error::{Error, Result};
use crate::stepper::Stepper;
use crate::trajectory::{fmt_f64, TrajectorySample};

pub const SWEEP_SCHEMA: &str = "pinnsim-step-sweep/1";
pub const SWEEP_INSTANCES_SCHEMA: &str = "pinnsim-step-sweep-instances/1";

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub method: String,
    pub r: Option<usize>,
    pub s: Option<usize>,
    pub dt: f64,
    /// Terminal speed error of the observed machine per instance, Hz; NaN
    /// where the step failed.
    pub errors_hz: Vec<f64>,
    pub max_error_hz: f64,
    pub median_error_hz: f64,
    pub failures: usize,
    pub nonconverged: usize,
    pub outside_box: usize,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub instance_times: Vec<f64>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn row(&self, method: &str, dt: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.method == method && (r.dt - dt).abs() < 1e-12)
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let opt = |v: Option<usize>| v.map_or(String::new(), |v| v.to_string());
        let summary: Vec<String> = self
            .rows
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{},{},{},{},{},{}",
                    r.method,
                    opt(r.r),
                    opt(r.s),
                    fmt_f64(r.dt),
                    r.errors_hz.len(),
                    fmt_f64(r.max_error_hz),
                    fmt_f64(r.median_error_hz),
                    r.failures,
                    r.nonconverged,
                    r.outside_box
                )
            })
            .collect();
        let mut detail = Vec::new();
        for r in &self.rows {
            for (i, (t0, e)) in self.instance_times.iter().zip(&r.errors_hz).enumerate() {
                detail.push(format!("{},{},{},{},{},{}", r.method, opt(r.r), opt(r.s), fmt_f64(r.dt), i, fmt_f64(*t0)) + "," + &fmt_f64(*e));
            }
        }
        let a = dir.join("sweep.csv");
        write_table(
            &a,
            SWEEP_SCHEMA,
            "method,r,s,dt,instances,max_error_hz,median_error_hz,failures,nonconverged,outside_box",
            &summary,
        )?;
        let b = dir.join("sweep_instances.csv");
        write_table(&b, SWEEP_INSTANCES_SCHEMA, "method,r,s,dt,instance,t0,error_hz", &detail)?;
        Ok(vec![a, b])
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    if s.is_empty() {
        return f64::NAN;
    }
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn run_step_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let sc = cfg.scenario()?;
    let sys = &sc.disturbed;
    let eq = &sc.equilibrium;
    let observed = cfg.observed(sys)?;
    let instance_times: Vec<f64> = (0..cfg.instances).map(|i| i as f64 * cfg.instance_spacing).collect();
    let last = *instance_times.last().expect("instances > 0");
    if last >= cfg.t_max {
        return Err(Error::InvalidParameter(format!(
            "{} instances spaced {} s do not fit in t_max = {} s",
            cfg.instances, cfg.instance_spacing, cfg.t_max
        )));
    }
    let dt_top = cfg.dt_grid.iter().copied().fold(0.0, f64::max);
    let times = uniform_times(last + dt_top + 0.5 * cfg.reference_interval, cfg.reference_interval);
    let reference = reference_simulate(sys, &eq.x0, &eq.v0, &times, &ReferenceOptions::default())?;
    let at = |t: f64| -> Result<&TrajectorySample> {
        reference
            .sample_at(t, 1e-9)
            .ok_or_else(|| Error::InvalidParameter(format!("reference interval does not divide t = {t}")))
    };
    let starts = instance_times.iter().map(|&t| at(t)).collect::<Result<Vec<_>>>()?;
    let networks = cfg.solvers.iter().map(|s| load_networks(cfg, sys, s.r)).collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::new();
    for (k, _) in cfg.solvers.iter().enumerate() {
        for &dt in &cfg.dt_grid {
            cells.push((Some(k), dt));
        }
    }
    for &dt in &cfg.dt_grid {
        cells.push((None, dt));
    }
    let rows = cells
        .iter()
        .map(|&(solver, dt)| -> Result<SweepRow> {
            let ends = instance_times.iter().map(|&t| at(t + dt)).collect::<Result<Vec<_>>>()?;
            let speed_err = |x: &[Vec<f64>], i: usize| {
                hz(sys, (x[observed].last().unwrap() - ends[i].x[observed].last().unwrap()).abs())
            };
            // (error, failed, nonconverged, outside box)
            let outcomes: Vec<(f64, bool, bool, bool)> = match solver {
                Some(k) => {
                    let stepper = Stepper::new(sys, &networks[k], cfg.step_config(cfg.solvers[k], dt))?;
                    starts
                        .par_iter()
                        .enumerate()
                        .map(|(i, st)| match stepper.step(st.t, &st.x, &st.v, None, None) {
                            Ok(res) => (
                                speed_err(&res.x_end, i),
                                false,
                                !res.converged,
                                inputs_outside_box(&stepper, &st.x, &res.xi_final) > 0,
                            ),
                            Err(e) => {
                                log::warn!("step from t = {} failed: {e}", st.t);
                                (f64::NAN, true, false, false)
                            }
                        })
                        .collect()
                }
                None => starts
                    .par_iter()
                    .enumerate()
                    .map(|(i, st)| match simulate_trapezoidal(sys, &st.x, &st.v, dt, dt) {
                        Ok(tr) if tr.failure.is_none() => (speed_err(&tr.last().expect("sample").x, i), false, false, false),
                        _ => (f64::NAN, true, false, false),
                    })
                    .collect(),
            };
            let errors_hz: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
            let (method, r, s) = match solver {
                Some(k) => (cfg.solvers[k].label(), Some(cfg.solvers[k].r), Some(cfg.solvers[k].s)),
                None => ("trapezoidal".to_string(), None, None),
            };
            Ok(SweepRow {
                method,
                r,
                s,
                dt,
                max_error_hz: errors_hz.iter().copied().filter(|e| e.is_finite()).fold(f64::NAN, f64::max),
                median_error_hz: median(&errors_hz),
                failures: outcomes.iter().filter(|o| o.1).count(),
                nonconverged: outcomes.iter().filter(|o| o.2).count(),
                outside_box: outcomes.iter().filter(|o| o.3).count(),
                errors_hz,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { instance_times, rows })
}
