//! The undisturbed and disturbed instances of a case.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::case::load_case;
use super::init::{apply_disturbance, init_equilibrium, Equilibrium};
use super::powerflow::power_flow;
use crate::error::{Error, Result};
use crate::models::PowerSystem;

/// Mechanical-power step applied to one machine at `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    pub machine: String,
    pub p_m_factor: f64,
}

impl Default for Disturbance {
    fn default() -> Self {
        Self { machine: "gen1".into(), p_m_factor: 0.5 }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub equilibrium: Equilibrium,
    pub disturbed: PowerSystem,
}

impl Scenario {
    pub fn build(case_path: &Path, disturbance: &Disturbance) -> Result<Self> {
        let case = load_case(case_path)?;
        let pf = power_flow(&case)?;
        let equilibrium = init_equilibrium(&case, &pf)?;
        let idx = machine_index(&equilibrium.system, &disturbance.machine)?;
        let disturbed = apply_disturbance(&equilibrium.system, idx, disturbance.p_m_factor)?;
        Ok(Self { equilibrium, disturbed })
    }

    pub fn undisturbed(&self) -> &PowerSystem {
        &self.equilibrium.system
    }
}

pub fn machine_index(system: &PowerSystem, id: &str) -> Result<usize> {
    system
        .machines
        .iter()
        .position(|m| m.id == id)
        .ok_or_else(|| Error::InvalidParameter(format!("no machine named '{id}'")))
}
