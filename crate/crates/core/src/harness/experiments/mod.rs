//! Experiment runners. Every runner computes its cells (independently, in
//! parallel), then writes versioned CSV files in a fixed order.

mod convergence;
mod pinn_error;
mod sweep;
mod trajectory;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::scenario::{machine_index, Disturbance, Scenario};
use super::{ieee9_case_path, weights_dir};
use crate::error::{Error, Result};
use crate::models::PowerSystem;
use crate::pinn::{load_network_set, PinnWeights};
use crate::stepper::{ProfileInit, StepConfig, Stepper};
use crate::trajectory::Trajectory;
use crate::voltage::SystemProfile;

pub use convergence::{is_monotone, plateau_iteration, run_convergence, ConvergenceResult, ConvergenceRun};
pub use pinn_error::{run_pinn_error, PinnErrorResult, PinnErrorRow};
pub use sweep::{run_step_sweep, SweepResult, SweepRow};
pub use trajectory::{run_trajectory_experiment, TrajectoryResult, TrajectoryRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Trajectory,
    StepSweep,
    PinnError,
    Convergence,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Trajectory => "trajectory",
            Self::StepSweep => "step-sweep",
            Self::PinnError => "pinn-error",
            Self::Convergence => "convergence",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Self::Trajectory, Self::StepSweep, Self::PinnError, Self::Convergence]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown experiment kind '{s}'")))
    }
}

/// Polynomial order and query-point count of one solver variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSetting {
    pub r: usize,
    pub s: usize,
}

impl SolverSetting {
    pub fn label(&self) -> String {
        format!("pinnsim-r{}-s{}", self.r, self.s)
    }
}

/// Settings of one experiment. Fields a kind does not use are ignored by it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Case file; the shipped 9-bus case when absent.
    pub case: Option<PathBuf>,
    /// Directory of trained networks; the shipped set when absent.
    pub weights_dir: Option<PathBuf>,
    pub disturbance: Disturbance,
    /// Machine whose speed error is reported.
    pub observed_machine: String,
    /// Simulated span (trajectory) or reference span instances are drawn from (step sweep).
    pub t_max: f64,
    pub dt_grid: Vec<f64>,
    pub solvers: Vec<SolverSetting>,
    pub init: ProfileInit,
    pub xi_tol: f64,
    pub k_max: usize,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Sampling interval of the reference trajectory.
    pub reference_interval: f64,
    pub instances: usize,
    pub instance_spacing: f64,
    pub test_points: usize,
    /// Ascending step-length bucket edges for the network error table.
    pub dt_buckets: Vec<f64>,
    /// Time on the reference trajectory the convergence runs start from.
    pub start_time: f64,
    /// Relative distance to the final objective that counts as reaching the plateau.
    pub plateau_rtol: f64,
}

const TRAJECTORY_GRID: [f64; 8] = [0.01, 0.02, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3];

impl ExperimentConfig {
    pub fn defaults(kind: ExperimentKind) -> Self {
        let both_orders = vec![
            SolverSetting { r: 1, s: 2 },
            SolverSetting { r: 1, s: 7 },
            SolverSetting { r: 2, s: 3 },
            SolverSetting { r: 2, s: 8 },
        ];
        let mut cfg = Self {
            kind,
            case: None,
            weights_dir: None,
            disturbance: Disturbance::default(),
            observed_machine: "gen2".into(),
            t_max: 2.5,
            dt_grid: TRAJECTORY_GRID.to_vec(),
            solvers: vec![SolverSetting { r: 2, s: 3 }],
            init: ProfileInit::Rotating,
            xi_tol: 1e-8,
            k_max: 20,
            seed: 0,
            output_dir: None,
            reference_interval: 0.01,
            instances: 200,
            instance_spacing: 0.05,
            test_points: 4000,
            dt_buckets: vec![0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3],
            start_time: 0.5,
            plateau_rtol: 1e-6,
        };
        match kind {
            ExperimentKind::Trajectory => {}
            ExperimentKind::StepSweep => {
                cfg.t_max = 10.0;
                cfg.dt_grid = [0.005].into_iter().chain(TRAJECTORY_GRID).collect();
                cfg.solvers = both_orders;
                cfg.reference_interval = 0.005;
            }
            ExperimentKind::PinnError => {
                cfg.seed = 1000;
                cfg.solvers = vec![SolverSetting { r: 1, s: 2 }, SolverSetting { r: 2, s: 3 }];
            }
            ExperimentKind::Convergence => {
                cfg.dt_grid = vec![0.05, 0.1, 0.15, 0.2, 0.25];
                cfg.solvers = both_orders;
                cfg.k_max = 50;
            }
        }
        cfg
    }

    /// Parses a (possibly partial) JSON configuration on top of the defaults
    /// of its kind. `kind` is required when the document has no `kind` field
    /// and must agree with it otherwise.
    pub fn from_json(text: &str, kind: Option<ExperimentKind>, origin: &Path) -> Result<Self> {
        let malformed = |message: String| Error::Malformed { path: origin.to_path_buf(), message };
        let doc: serde_json::Value = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
        let obj = doc.as_object().ok_or_else(|| malformed("expected a JSON object".into()))?;
        let declared = match obj.get("kind") {
            Some(v) => Some(
                serde_json::from_value::<ExperimentKind>(v.clone()).map_err(|e| malformed(format!("kind: {e}")))?,
            ),
            None => None,
        };
        let kind = match (declared, kind) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::InvalidParameter(format!(
                    "configuration is for '{}' but '{}' was requested",
                    a.name(),
                    b.name()
                )))
            }
            (Some(k), _) | (None, Some(k)) => k,
            (None, None) => return Err(malformed("missing experiment kind".into())),
        };
        let mut merged = serde_json::to_value(Self::defaults(kind)).expect("config serializes");
        let target = merged.as_object_mut().expect("object");
        for (k, v) in obj {
            target.insert(k.clone(), v.clone());
        }
        let cfg: Self = serde_path_to_error::deserialize(merged).map_err(|e| malformed(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.dt_grid.is_empty() || self.solvers.is_empty() {
            return bad("step-size grid and solver list must be non-empty".into());
        }
        if self.dt_grid.iter().any(|&dt| !(dt > 0.0 && dt.is_finite())) {
            return bad(format!("step sizes must be positive: {:?}", self.dt_grid));
        }
        if !(self.t_max > 0.0) || !(self.reference_interval > 0.0) || !(self.instance_spacing > 0.0) {
            return bad("t_max, reference_interval and instance_spacing must be positive".into());
        }
        if self.instances == 0 || self.test_points == 0 || self.k_max == 0 {
            return bad("instances, test_points and k_max must be positive".into());
        }
        if self.dt_buckets.len() < 2 || self.dt_buckets.windows(2).any(|w| !(w[1] > w[0])) {
            return bad(format!("dt buckets must be ascending with at least two edges: {:?}", self.dt_buckets));
        }
        if !(self.start_time >= 0.0) || !(self.plateau_rtol >= 0.0) || !(self.xi_tol > 0.0) {
            return bad("start_time, plateau_rtol must be non-negative and xi_tol positive".into());
        }
        for s in &self.solvers {
            if s.s == 0 {
                return bad("query-point count must be positive".into());
            }
        }
        Ok(())
    }

    pub(crate) fn step_config(&self, solver: SolverSetting, dt: f64) -> StepConfig {
        StepConfig { dt, s: solver.s, r: solver.r, xi_tol: self.xi_tol, k_max: self.k_max, damping: 0.0, init: self.init }
    }

    pub(crate) fn scenario(&self) -> Result<Scenario> {
        Scenario::build(&self.case.clone().unwrap_or_else(ieee9_case_path), &self.disturbance)
    }

    pub(crate) fn weights_dir(&self) -> PathBuf {
        self.weights_dir.clone().unwrap_or_else(weights_dir)
    }

    pub(crate) fn observed(&self, system: &PowerSystem) -> Result<usize> {
        machine_index(system, &self.observed_machine)
    }
}

/// Result of any experiment kind.
#[derive(Debug, Clone)]
pub enum ExperimentResult {
    Trajectory(TrajectoryResult),
    StepSweep(SweepResult),
    PinnError(PinnErrorResult),
    Convergence(ConvergenceResult),
}

impl ExperimentResult {
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        match self {
            Self::Trajectory(r) => r.write(dir),
            Self::StepSweep(r) => r.write(dir),
            Self::PinnError(r) => r.write(dir),
            Self::Convergence(r) => r.write(dir),
        }
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    Ok(match cfg.kind {
        ExperimentKind::Trajectory => ExperimentResult::Trajectory(run_trajectory_experiment(cfg)?),
        ExperimentKind::StepSweep => ExperimentResult::StepSweep(run_step_sweep(cfg)?),
        ExperimentKind::PinnError => ExperimentResult::PinnError(run_pinn_error(cfg)?),
        ExperimentKind::Convergence => ExperimentResult::Convergence(run_convergence(cfg)?),
    })
}

/// Writes one CSV file: schema comment, header, rows.
pub(crate) fn write_table(path: &Path, schema: &str, header: &str, rows: &[String]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# schema: {schema}")?;
    writeln!(w, "{header}")?;
    for r in rows {
        writeln!(w, "{r}")?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    traj.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Speed deviation in pu to Hz.
pub(crate) fn hz(system: &PowerSystem, dw: f64) -> f64 {
    dw * system.machines[0].params.omega_s / (2.0 * std::f64::consts::PI)
}

/// Largest speed error of `machine` over the samples of `traj`, in Hz. Every
/// sample must have a reference sample at the same time.
pub(crate) fn max_speed_error_hz(system: &PowerSystem, traj: &Trajectory, reference: &Trajectory, machine: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for s in &traj.samples {
        let r = reference
            .sample_at(s.t, 1e-9)
            .ok_or_else(|| Error::InvalidParameter(format!("reference has no sample at t = {}", s.t)))?;
        worst = worst.max(hz(system, (s.x[machine].last().unwrap() - r.x[machine].last().unwrap()).abs()));
    }
    Ok(worst)
}

pub(crate) fn load_networks(cfg: &ExperimentConfig, system: &PowerSystem, r: usize) -> Result<Vec<PinnWeights>> {
    load_network_set(&cfg.weights_dir(), system, r)
}

/// Number of machines whose step-start input, under the converged profile,
/// lies outside the sampling box the network was trained on. The first
/// offending quantity is logged.
pub(crate) fn inputs_outside_box(stepper: &Stepper, x0: &[Vec<f64>], xi: &SystemProfile) -> usize {
    let mut count = 0;
    for (k, w) in stepper.networks.iter().enumerate() {
        let Some(ranges) = &w.metadata.sampling else { continue };
        if let Some(msg) = ranges.violation(&stepper.input(k, 0.0, &x0[k], xi), w.metadata.omega_s) {
            log::debug!("'{}' at t = {}: {msg}", w.metadata.component_id, xi.t0);
            count += 1;
        }
    }
    count
}

/// `f64` for file names: shortest round-trip form.
pub(crate) fn tag(v: f64) -> String {
    format!("{v}")
}
