//! Accuracy of each stored network on a fresh oracle-labeled test set.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{write_table, ExperimentConfig};
use crate::error::{Error, Result};
use crate::pinn::{generate_dataset, load_weights, PinnWeights, SamplingRanges, TrainingConfig};
use crate::trajectory::fmt_f64;

pub const PINN_ERROR_SCHEMA: &str = "pinnsim-pinn-error/1";

#[derive(Debug, Clone)]
pub struct PinnErrorRow {
    /// File stem of the network.
    pub network: String,
    pub component: String,
    pub r: usize,
    pub bucket: [f64; 2],
    pub count: usize,
    /// Infinity norm of the state error.
    pub median_error: f64,
    pub max_error: f64,
    pub median_speed_error_hz: f64,
    pub max_speed_error_hz: f64,
}

#[derive(Debug, Clone)]
pub struct PinnErrorResult {
    pub test_points: usize,
    pub rows: Vec<PinnErrorRow>,
}

impl PinnErrorResult {
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let rows: Vec<String> = self
            .rows
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{},{},{},{},{},{}",
                    r.network,
                    r.component,
                    r.r,
                    fmt_f64(r.bucket[0]),
                    fmt_f64(r.bucket[1]),
                    r.count,
                    fmt_f64(r.median_error),
                    fmt_f64(r.max_error),
                    fmt_f64(r.median_speed_error_hz),
                    fmt_f64(r.max_speed_error_hz)
                )
            })
            .collect();
        let p = dir.join("pinn_error.csv");
        write_table(
            &p,
            PINN_ERROR_SCHEMA,
            "network,component,r,dt_lo,dt_hi,count,median_error,max_error,median_speed_error_hz,max_speed_error_hz",
            &rows,
        )?;
        Ok(vec![p])
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn network_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(dir.to_path_buf()),
        _ => e.into(),
    })?;
    let mut paths: Vec<PathBuf> =
        rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|e| e == "json")).collect();
    paths.sort();
    Ok(paths)
}

/// Bucket index of `dt`; the last bucket is closed.
fn bucket_of(edges: &[f64], dt: f64) -> Option<usize> {
    let nb = edges.len() - 1;
    (0..nb).find(|&b| dt >= edges[b] && (dt < edges[b + 1] || (b + 1 == nb && dt <= edges[nb])))
}

fn evaluate_network(cfg: &ExperimentConfig, name: &str, w: &PinnWeights, systems: &[&crate::models::PowerSystem]) -> Result<Vec<PinnErrorRow>> {
    let md = &w.metadata;
    let machine = systems
        .iter()
        .flat_map(|s| s.machines.iter())
        .find(|m| w.check_compatible(m, md.r).is_ok())
        .ok_or_else(|| Error::LayoutMismatch(format!("network '{name}' matches no machine of the case")))?;
    let ranges = md.sampling.clone().unwrap_or_else(|| {
        log::warn!("network '{name}' does not record its training box; using the default box");
        SamplingRanges::default()
    });
    let tc = TrainingConfig {
        n_data: cfg.test_points,
        n_collocation: 1,
        seed: cfg.seed,
        dt_max: md.dt_max,
        r: md.r,
        include_control: md.include_control,
        ranges,
        ..TrainingConfig::default()
    };
    let data = generate_dataset(machine, &tc)?;
    let to_hz = md.omega_s / (2.0 * std::f64::consts::PI);
    let errs = data
        .labeled
        .par_iter()
        .map(|pt| {
            let x = w.forward(&pt.input)?;
            let e = x.iter().zip(&pt.target).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            let p = x.len();
            Ok((pt.input.dt, e, (x[p - 1] - pt.target[p - 1]).abs() * to_hz))
        })
        .collect::<Result<Vec<_>>>()?;
    let nb = cfg.dt_buckets.len() - 1;
    let mut buckets = vec![(Vec::new(), Vec::new()); nb];
    for (dt, e, es) in errs {
        if let Some(b) = bucket_of(&cfg.dt_buckets, dt) {
            buckets[b].0.push(e);
            buckets[b].1.push(es);
        }
    }
    Ok(buckets
        .into_iter()
        .enumerate()
        .map(|(b, (e, es))| PinnErrorRow {
            network: name.to_string(),
            component: md.component_id.clone(),
            r: md.r,
            bucket: [cfg.dt_buckets[b], cfg.dt_buckets[b + 1]],
            count: e.len(),
            max_error: e.iter().copied().fold(f64::NAN, f64::max),
            max_speed_error_hz: es.iter().copied().fold(f64::NAN, f64::max),
            median_error: median(e),
            median_speed_error_hz: median(es),
        })
        .collect())
}

pub fn run_pinn_error(cfg: &ExperimentConfig) -> Result<PinnErrorResult> {
    let sc = cfg.scenario()?;
    let systems = [&sc.disturbed, sc.undisturbed()];
    let mut rows = Vec::new();
    for path in network_files(&cfg.weights_dir())? {
        let w = load_weights(&path)?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        rows.extend(evaluate_network(cfg, &name, &w, &systems)?);
    }
    Ok(PinnErrorResult { test_points: cfg.test_points, rows })
}
