//! Sampled simulation output shared by all integrators.

use std::io::Write;

use num_complex::Complex64;

use crate::error::Result;
use crate::models::PowerSystem;

pub const TRAJECTORY_SCHEMA: &str = "pinnsim-trajectory/1";

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    /// Per-machine states.
    pub x: Vec<Vec<f64>>,
    pub v: Vec<Complex64>,
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub machine_ids: Vec<String>,
    pub samples: Vec<TrajectorySample>,
    /// The last step was shorter than the nominal step.
    pub partial_final_step: bool,
    /// Set when the run stopped early; `samples` then holds the partial result.
    pub failure: Option<String>,
}

impl Trajectory {
    pub fn new(system: &PowerSystem) -> Self {
        Self { machine_ids: system.machines.iter().map(|m| m.id.clone()).collect(), ..Default::default() }
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    /// Last state component (the speed deviation for machine models) of `machine`.
    pub fn speed(&self, machine: usize) -> Vec<f64> {
        self.samples.iter().map(|s| *s.x[machine].last().expect("non-empty state")).collect()
    }

    pub fn last(&self) -> Option<&TrajectorySample> {
        self.samples.last()
    }

    /// Sample closest to `t`, if within `tol`.
    pub fn sample_at(&self, t: f64, tol: f64) -> Option<&TrajectorySample> {
        let idx = self.samples.partition_point(|s| s.t < t - tol);
        self.samples.get(idx).filter(|s| (s.t - t).abs() <= tol)
    }

    /// Writes the trajectory as CSV: a schema comment line, a header, then
    /// one row per sample with all values at 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# schema: {TRAJECTORY_SCHEMA}")?;
        let mut header = vec!["t".to_string()];
        if let Some(first) = self.samples.first() {
            for (id, x) in self.machine_ids.iter().zip(&first.x) {
                let names: &[&str] = if x.len() == 4 {
                    &["e_q_p", "e_d_p", "delta", "delta_omega"]
                } else {
                    &["delta", "delta_omega"]
                };
                header.extend(names.iter().map(|n| format!("{id}_{n}")));
            }
            for b in 0..first.v.len() {
                header.push(format!("v{}_re", b + 1));
                header.push(format!("v{}_im", b + 1));
            }
        }
        writeln!(w, "{}", header.join(","))?;
        for s in &self.samples {
            let mut row = vec![fmt_f64(s.t)];
            row.extend(s.x.iter().flatten().map(|&v| fmt_f64(v)));
            for v in &s.v {
                row.push(fmt_f64(v.re));
                row.push(fmt_f64(v.im));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
