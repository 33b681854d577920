//! JSON persistence of trained networks.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::network::{Activation, Layer, Norms, PinnMetadata, PinnWeights};
use crate::error::{Error, Result};
use crate::models::{Machine, PowerSystem};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsFile {
    metadata: PinnMetadata,
    norms: Norms,
    layers: Vec<LayerFile>,
    activation: Activation,
}

pub fn weights_to_json(w: &PinnWeights) -> String {
    let file = WeightsFile {
        metadata: w.metadata.clone(),
        norms: w.norms.clone(),
        layers: w
            .layers
            .iter()
            .map(|l| LayerFile { w: l.w.row_iter().map(|r| r.iter().copied().collect()).collect(), b: l.b.iter().copied().collect() })
            .collect(),
        activation: w.activation,
    };
    serde_json::to_string_pretty(&file).expect("weights serialize")
}

pub fn weights_from_json(text: &str, path: &Path) -> Result<PinnWeights> {
    let malformed = |message: String| Error::Malformed { path: path.to_path_buf(), message };
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: WeightsFile = serde_path_to_error::deserialize(de)
        .map_err(|e| malformed(format!("{} (at {})", e.inner(), e.path())))?;
    let mut layers = Vec::with_capacity(file.layers.len());
    for (k, l) in file.layers.into_iter().enumerate() {
        let rows = l.w.len();
        let cols = l.w.first().map_or(0, |r| r.len());
        if l.w.iter().any(|r| r.len() != cols) {
            return Err(malformed(format!("layer {k} has ragged weight rows")));
        }
        layers.push(Layer {
            w: DMatrix::from_row_iterator(rows, cols, l.w.into_iter().flatten()),
            b: DVector::from_vec(l.b),
        });
    }
    let w = PinnWeights { metadata: file.metadata, norms: file.norms, layers, activation: file.activation };
    w.validate()?;
    Ok(w)
}

pub fn save_weights(w: &PinnWeights, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, weights_to_json(w))?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<PinnWeights> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::NotFound(path.to_path_buf())),
        Err(e) => return Err(e.into()),
    };
    weights_from_json(&text, path)
}

impl PinnWeights {
    /// Checks that this network can serve `machine` in a solver of order `r`.
    pub fn check_compatible(&self, machine: &Machine, r: usize) -> Result<()> {
        let md = &self.metadata;
        if md.component_id != machine.id {
            return Err(Error::LayoutMismatch(format!("network is for '{}', requested by '{}'", md.component_id, machine.id)));
        }
        if md.model != machine.model() {
            return Err(Error::LayoutMismatch(format!("network is for a {:?} machine, '{}' is {:?}", md.model, machine.id, machine.model())));
        }
        if md.r != r {
            return Err(Error::LayoutMismatch(format!("network '{}' was trained with r = {}, solver uses r = {r}", md.component_id, md.r)));
        }
        if (md.omega_s - machine.params.omega_s).abs() > 1e-9 {
            return Err(Error::LayoutMismatch(format!("network '{}' uses a different synchronous speed", md.component_id)));
        }
        if let Some(u) = md.control {
            let c = machine.control;
            if (u.p_m - c.p_m).abs() > 1e-6 || (u.e_fd - c.e_fd).abs() > 1e-6 {
                return Err(Error::LayoutMismatch(format!(
                    "network '{}' was trained at P_m = {}, E_fd = {}; machine has P_m = {}, E_fd = {}",
                    md.component_id, u.p_m, u.e_fd, c.p_m, c.e_fd
                )));
            }
        }
        Ok(())
    }
}

/// Loads one compatible network per machine from `dir`. Files are scanned in
/// name order and the first compatible network is taken.
pub fn load_network_set(dir: &Path, system: &PowerSystem, r: usize) -> Result<Vec<PinnWeights>> {
    let mut paths: Vec<_> = match std::fs::read_dir(dir) {
        Ok(rd) => rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|e| e == "json")).collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::NotFound(dir.to_path_buf())),
        Err(e) => return Err(e.into()),
    };
    paths.sort();
    let mut candidates = Vec::new();
    for p in &paths {
        candidates.push(load_weights(p)?);
    }
    system
        .machines
        .iter()
        .map(|m| {
            let mut reasons = Vec::new();
            for w in &candidates {
                match w.check_compatible(m, r) {
                    Ok(()) => return Ok(w.clone()),
                    Err(e) if w.metadata.component_id == m.id => reasons.push(e.to_string()),
                    Err(_) => {}
                }
            }
            Err(Error::LayoutMismatch(format!(
                "no compatible network for '{}' with r = {r} in {}{}",
                m.id,
                dir.display(),
                if reasons.is_empty() { String::new() } else { format!(" ({})", reasons.join("; ")) }
            )))
        })
        .collect()
}
