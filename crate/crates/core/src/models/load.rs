use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constant-impedance load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticLoadParams {
    pub bus: usize,
    pub y_load: Complex64,
}

impl StaticLoadParams {
    /// Admittance consuming `s` at voltage magnitude `v_mag`: `conj(S) / |V|^2`.
    pub fn from_power(bus: usize, s: Complex64, v_mag: f64) -> Result<Self> {
        if !(v_mag > 0.0) {
            return Err(Error::InvalidParameter(format!("load voltage magnitude must be positive, got {v_mag}")));
        }
        Ok(Self { bus, y_load: s.conj() / (v_mag * v_mag) })
    }
}

/// Load injection; consumption is a negative injection.
pub fn load_h(v: Complex64, params: &StaticLoadParams) -> Complex64 {
    -params.y_load * v
}
