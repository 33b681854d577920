//! JSON case files.

use std::collections::{HashMap, HashSet, VecDeque};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{AdmittanceMatrix, Branch, MachineModel, MachineParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusData {
    pub id: u32,
    pub kind: BusKind,
    /// Voltage set point for slack and PV buses (pu).
    #[serde(default = "one")]
    pub v_set: f64,
    /// Angle of the slack bus (rad).
    #[serde(default)]
    pub angle_set: f64,
    /// Scheduled generation (pu); ignored for the slack bus.
    #[serde(default)]
    pub p_gen: f64,
    #[serde(default)]
    pub q_gen: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchData {
    pub from: u32,
    pub to: u32,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance (pu).
    #[serde(default)]
    pub b: f64,
    #[serde(default = "one")]
    pub tap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShuntData {
    pub bus: u32,
    pub g: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineData {
    pub id: String,
    pub bus: u32,
    pub model: MachineModel,
    pub h: f64,
    pub d: f64,
    pub x_d: f64,
    pub x_d_p: f64,
    #[serde(default)]
    pub x_q: Option<f64>,
    #[serde(default)]
    pub x_q_p: Option<f64>,
    #[serde(default)]
    pub t_do_p: Option<f64>,
    #[serde(default)]
    pub t_qo_p: Option<f64>,
    pub r_s: f64,
    /// Tabulated set points; the equilibrium initialization recomputes them.
    pub p_m: f64,
    pub e_fd: f64,
}

impl MachineData {
    pub fn params(&self, omega_s: f64) -> Result<MachineParams> {
        let params = match self.model {
            MachineModel::Classical => MachineParams::classical(self.h, self.d, self.x_d_p, self.r_s, omega_s),
            MachineModel::TwoAxis => {
                let need = |v: Option<f64>, name: &str| {
                    v.ok_or_else(|| Error::Validation(format!("machine '{}': two-axis model needs {name}", self.id)))
                };
                MachineParams {
                    h: self.h,
                    d: self.d,
                    x_d: self.x_d,
                    x_d_p: self.x_d_p,
                    x_q: need(self.x_q, "x_q")?,
                    x_q_p: need(self.x_q_p, "x_q_p")?,
                    t_do_p: need(self.t_do_p, "t_do_p")?,
                    t_qo_p: need(self.t_qo_p, "t_qo_p")?,
                    r_s: self.r_s,
                    omega_s,
                    model: MachineModel::TwoAxis,
                }
            }
        };
        params
            .validate()
            .map_err(|e| Error::Validation(format!("machine '{}': {e}", self.id)))?;
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadData {
    pub bus: u32,
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseFile {
    pub name: String,
    /// Free-form provenance of the data.
    #[serde(default)]
    pub source: String,
    pub base_mva: f64,
    pub frequency_hz: f64,
    pub buses: Vec<BusData>,
    pub branches: Vec<BranchData>,
    #[serde(default)]
    pub shunts: Vec<ShuntData>,
    pub machines: Vec<MachineData>,
    #[serde(default)]
    pub loads: Vec<LoadData>,
}

/// Reads and validates a case file.
pub fn load_case(path: impl AsRef<Path>) -> Result<CaseFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let case = parse_case(&text).map_err(|e| match e {
        Error::Validation(message) => Error::Validation(format!("{}: {message}", path.display())),
        other => other,
    })?;
    Ok(case)
}

/// Parses case JSON, reporting the offending field path and line on schema errors.
pub fn parse_case(text: &str) -> Result<CaseFile> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let case: CaseFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.inner();
        Error::Validation(format!(
            "schema error at field '{}' (line {}, column {}): {inner}",
            e.path(),
            inner.line(),
            inner.column()
        ))
    })?;
    case.validate()?;
    Ok(case)
}

pub fn to_json(case: &CaseFile) -> String {
    serde_json::to_string_pretty(case).expect("case serializes")
}

impl CaseFile {
    pub fn omega_s(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.frequency_hz
    }

    /// Map from bus id to 0-based index.
    pub fn bus_index(&self) -> HashMap<u32, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    pub fn slack_index(&self) -> usize {
        self.buses.iter().position(|b| b.kind == BusKind::Slack).expect("validated case has a slack bus")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));
        if self.buses.is_empty() {
            return fail("case has no buses".into());
        }
        if !(self.base_mva > 0.0) || !(self.frequency_hz > 0.0) {
            return fail("base_mva and frequency_hz must be positive".into());
        }
        let index = self.bus_index();
        if index.len() != self.buses.len() {
            return fail("duplicate bus ids".into());
        }
        let slack = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if slack != 1 {
            return fail(format!("exactly one slack bus required, found {slack}"));
        }
        let lookup = |id: u32, what: &str| -> Result<usize> {
            index.get(&id).copied().ok_or_else(|| Error::Validation(format!("{what} references missing bus {id}")))
        };
        let mut adjacency = vec![Vec::new(); self.buses.len()];
        for (k, br) in self.branches.iter().enumerate() {
            let (f, t) = (lookup(br.from, &format!("branch {k}"))?, lookup(br.to, &format!("branch {k}"))?);
            if f == t {
                return fail(format!("branch {k} connects bus {} to itself", br.from));
            }
            if Complex64::new(br.r, br.x).norm() == 0.0 || !(br.tap > 0.0) {
                return fail(format!("branch {k} has zero impedance or non-positive tap"));
            }
            adjacency[f].push(t);
            adjacency[t].push(f);
        }
        for s in &self.shunts {
            lookup(s.bus, "shunt")?;
        }
        for l in &self.loads {
            lookup(l.bus, "load")?;
        }
        let mut machine_buses = HashSet::new();
        let mut ids = HashSet::new();
        for m in &self.machines {
            let b = lookup(m.bus, &format!("machine '{}'", m.id))?;
            if !machine_buses.insert(b) {
                return fail(format!("more than one machine on bus {}", m.bus));
            }
            if !ids.insert(m.id.as_str()) {
                return fail(format!("duplicate machine id '{}'", m.id));
            }
            if self.buses[b].kind == BusKind::Pq {
                return fail(format!("machine '{}' sits on PQ bus {}", m.id, m.bus));
            }
            m.params(self.omega_s())?;
        }
        for (i, b) in self.buses.iter().enumerate() {
            if b.kind != BusKind::Pq && !machine_buses.contains(&i) {
                return fail(format!("{:?} bus {} has no machine", b.kind, b.id));
            }
            if !(b.v_set > 0.0) {
                return fail(format!("bus {} has non-positive voltage set point", b.id));
            }
        }
        // Connectivity by breadth-first search from the first bus.
        let mut seen = vec![false; self.buses.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adjacency[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return fail(format!("network is not connected: bus {} unreachable", self.buses[i].id));
        }
        Ok(())
    }

    pub fn branches(&self) -> Vec<Branch> {
        let index = self.bus_index();
        self.branches
            .iter()
            .map(|b| Branch { from: index[&b.from], to: index[&b.to], r: b.r, x: b.x, b: b.b, tap: b.tap })
            .collect()
    }

    /// Network admittance matrix; loads are not folded in.
    pub fn admittance(&self) -> Result<AdmittanceMatrix> {
        let index = self.bus_index();
        let shunts: Vec<_> = self.shunts.iter().map(|s| (index[&s.bus], Complex64::new(s.g, s.b))).collect();
        let y = AdmittanceMatrix::from_branches(self.buses.len(), &self.branches(), &shunts)?;
        y.validate()?;
        Ok(y)
    }

    /// Scheduled load per bus.
    pub fn bus_loads(&self) -> Vec<Complex64> {
        let index = self.bus_index();
        let mut s = vec![Complex64::new(0.0, 0.0); self.buses.len()];
        for l in &self.loads {
            s[index[&l.bus]] += Complex64::new(l.p, l.q);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_bus_json() -> String {
        r#"{
            "name": "two-bus",
            "base_mva": 100.0,
            "frequency_hz": 60.0,
            "buses": [
                {"id": 1, "kind": "slack", "v_set": 1.0},
                {"id": 2, "kind": "pq"}
            ],
            "branches": [{"from": 1, "to": 2, "r": 0.0, "x": 0.1}],
            "machines": [{"id": "g1", "bus": 1, "model": "classical", "h": 3.0, "d": 1.0,
                          "x_d": 0.3, "x_d_p": 0.1, "r_s": 0.0, "p_m": 0.0, "e_fd": 1.0}]
        }"#
        .to_string()
    }

    #[test]
    fn parses_minimal_case() {
        let case = parse_case(&two_bus_json()).unwrap();
        assert_eq!(case.buses.len(), 2);
        assert_eq!(case.branches[0].tap, 1.0);
    }

    #[test]
    fn missing_slack_is_rejected() {
        let text = two_bus_json().replace("\"slack\"", "\"pq\"");
        let err = parse_case(&text).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("slack")), "{err}");
    }

    #[test]
    fn schema_errors_name_the_field() {
        let text = two_bus_json().replace("\"h\": 3.0", "\"h\": \"fast\"");
        let err = parse_case(&text).unwrap_err().to_string();
        assert!(err.contains("machines[0].h"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn disconnected_network_is_rejected() {
        let text = two_bus_json().replace("\"branches\": [{\"from\": 1, \"to\": 2, \"r\": 0.0, \"x\": 0.1}]", "\"branches\": []");
        assert!(parse_case(&text).is_err());
    }

    #[test]
    fn missing_file_is_not_found() {
        assert!(matches!(load_case("/nonexistent/case.json"), Err(Error::NotFound(_))));
    }

    #[test]
    fn serialize_round_trip() {
        let case = parse_case(&two_bus_json()).unwrap();
        let again = parse_case(&to_json(&case)).unwrap();
        assert_eq!(case, again);
    }
}
