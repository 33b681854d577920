//! Power-system components and the network coupling them.

mod component;
mod load;
mod machine;
mod network;

use num_complex::Complex64;

pub use component::{ComponentPartials, DynamicComponent, Machine};
pub use load::{load_h, StaticLoadParams};
pub use machine::{
    classical_f, classical_h, dq_currents, two_axis_f, two_axis_h, ControlInput, MachineModel, MachineParams,
    MachineState, OMEGA_S_60HZ,
};
pub use network::{network_currents, AdmittanceMatrix, Branch};

use crate::error::{Error, Result};

/// Complex bus voltage or current in per-unit.
pub type ComplexPhasor = Complex64;

/// Network plus the dynamic and static components attached to its buses.
#[derive(Debug, Clone)]
pub struct PowerSystem {
    pub y: AdmittanceMatrix,
    pub machines: Vec<Machine>,
    pub loads: Vec<StaticLoadParams>,
}

impl PowerSystem {
    pub fn new(y: AdmittanceMatrix, machines: Vec<Machine>, loads: Vec<StaticLoadParams>) -> Result<Self> {
        let n = y.n();
        for m in &machines {
            m.params.validate()?;
            if m.bus >= n {
                return Err(Error::Validation(format!("machine '{}' on missing bus {}", m.id, m.bus)));
            }
        }
        if let Some(l) = loads.iter().find(|l| l.bus >= n) {
            return Err(Error::Validation(format!("load on missing bus {}", l.bus)));
        }
        Ok(Self { y, machines, loads })
    }

    pub fn n_buses(&self) -> usize {
        self.y.n()
    }

    pub fn state_dims(&self) -> Vec<usize> {
        self.machines.iter().map(|m| m.state_dim()).collect()
    }

    /// Sum of component injections at every bus.
    pub fn component_currents(&self, x: &[Vec<f64>], v: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_dims(x, v)?;
        let mut i = vec![Complex64::new(0.0, 0.0); self.n_buses()];
        for (m, xm) in self.machines.iter().zip(x) {
            i[m.bus] += m.injection(xm, v[m.bus])?;
        }
        for l in &self.loads {
            i[l.bus] += load_h(v[l.bus], l);
        }
        Ok(i)
    }

    /// Current balance `i_C - i_N` per bus.
    pub fn current_mismatch(&self, x: &[Vec<f64>], v: &[Complex64]) -> Result<Vec<Complex64>> {
        let ic = self.component_currents(x, v)?;
        let inet = network_currents(&self.y, v)?;
        Ok(ic.iter().zip(&inet).map(|(a, b)| a - b).collect())
    }

    pub(crate) fn check_dims(&self, x: &[Vec<f64>], v: &[Complex64]) -> Result<()> {
        if x.len() != self.machines.len() {
            return Err(Error::Dimension { context: "machine states", expected: self.machines.len(), actual: x.len() });
        }
        if v.len() != self.n_buses() {
            return Err(Error::Dimension { context: "bus voltages", expected: self.n_buses(), actual: v.len() });
        }
        Ok(())
    }
}
