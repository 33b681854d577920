//! Equilibrium initialization from a load-flow solution.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;

use super::case::CaseFile;
use super::powerflow::PowerFlowSolution;
use crate::error::{Error, Result};
use crate::models::{
    ControlInput, DynamicComponent, Machine, MachineModel, MachineParams, MachineState, PowerSystem, StaticLoadParams,
};

/// Largest admissible update-function norm at an initialized equilibrium.
pub const EQUILIBRIUM_TOL: f64 = 1e-8;

/// An initialized system with its consistent initial condition.
#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub system: PowerSystem,
    pub x0: Vec<Vec<f64>>,
    pub v0: Vec<Complex64>,
}

/// Internal state and control inputs of one machine at steady state with
/// terminal voltage `v` and injected current `i`.
pub fn machine_equilibrium(params: &MachineParams, v: Complex64, i: Complex64) -> (MachineState, ControlInput) {
    // The rotor angle aligns the q axis with v + (R_s + jX_q) i.
    let delta = (v + Complex64::new(params.r_s, params.x_q) * i).arg();
    let to_dq = Complex64::from_polar(1.0, -(delta - FRAC_PI_2));
    let idq = i * to_dq;
    let vdq = v * to_dq;
    let (i_d, i_q) = (idq.re, idq.im);
    let e_d = params.r_s * i_d - params.x_q_p * i_q + vdq.re;
    let e_q = params.x_d_p * i_d + params.r_s * i_q + vdq.im;
    let p_e = e_d * i_d + e_q * i_q + (params.x_q_p - params.x_d_p) * i_d * i_q;
    let e_fd = e_q + (params.x_d - params.x_d_p) * i_d;
    (
        MachineState { e_q_p: e_q, e_d_p: e_d, delta, delta_omega: 0.0 },
        ControlInput { p_m: p_e, e_fd },
    )
}

pub fn init_equilibrium(case: &CaseFile, pf: &PowerFlowSolution) -> Result<Equilibrium> {
    let y = case.admittance()?;
    let index = case.bus_index();
    let omega_s = case.omega_s();
    let mut machines = Vec::with_capacity(case.machines.len());
    let mut x0 = Vec::with_capacity(case.machines.len());
    for (data, &i) in case.machines.iter().zip(&pf.machine_currents) {
        let bus = index[&data.bus];
        let params = data.params(omega_s)?;
        let v = pf.voltages[bus];
        let (st, mut u) = machine_equilibrium(&params, v, i);
        let x = match params.model {
            MachineModel::Classical => {
                // Excitation is not a classical-model input; keep the tabulated value.
                u.e_fd = data.e_fd;
                vec![st.delta, st.delta_omega]
            }
            MachineModel::TwoAxis => vec![st.e_q_p, st.e_d_p, st.delta, st.delta_omega],
        };
        let machine = Machine { id: data.id.clone(), bus, params, control: u, e_q0: st.e_q_p, e_d0: st.e_d_p };
        let f = machine.update(&x, v)?;
        let norm = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(norm <= EQUILIBRIUM_TOL) {
            return Err(Error::Initialization(format!(
                "machine '{}' is not at equilibrium after initialization (|f| = {norm:e})",
                data.id
            )));
        }
        machines.push(machine);
        x0.push(x);
    }
    let loads = case
        .loads
        .iter()
        .map(|l| {
            let bus = index[&l.bus];
            StaticLoadParams::from_power(bus, Complex64::new(l.p, l.q), pf.voltages[bus].norm())
        })
        .collect::<Result<Vec<_>>>()?;
    let system = PowerSystem::new(y, machines, loads)?;
    Ok(Equilibrium { system, x0, v0: pf.voltages.clone() })
}

/// Scales the mechanical power of one machine.
pub fn apply_disturbance(system: &PowerSystem, machine: usize, factor: f64) -> Result<PowerSystem> {
    let mut out = system.clone();
    let m = out
        .machines
        .get_mut(machine)
        .ok_or_else(|| Error::InvalidParameter(format!("no machine with index {machine}")))?;
    m.control.p_m *= factor;
    Ok(out)
}
