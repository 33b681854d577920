//! Synchronous machine models: the two-axis model and its classical reduction.
//!
//! Both models share the stator algebra: the dq-axis currents follow from a
//! 2x2 linear system in the machine frame and are rotated into the network
//! frame by `exp(j(delta - pi/2))`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Synchronous speed of a 60 Hz system in rad/s.
pub const OMEGA_S_60HZ: f64 = 2.0 * PI * 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MachineModel {
    /// Constant voltage behind transient reactance; states (delta, delta_omega).
    Classical,
    /// Two-axis model; states (E'_q, E'_d, delta, delta_omega).
    TwoAxis,
}

impl MachineModel {
    pub fn state_dim(self) -> usize {
        match self {
            MachineModel::Classical => 2,
            MachineModel::TwoAxis => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MachineParams {
    /// Inertia constant (s).
    pub h: f64,
    /// Damping (pu).
    pub d: f64,
    pub x_d: f64,
    pub x_d_p: f64,
    pub x_q: f64,
    pub x_q_p: f64,
    /// Open-circuit transient time constants (s).
    pub t_do_p: f64,
    pub t_qo_p: f64,
    /// Stator resistance (pu).
    pub r_s: f64,
    /// Synchronous angular speed (rad/s).
    pub omega_s: f64,
    pub model: MachineModel,
}

impl MachineParams {
    /// Classical reduction: `X'_q = X'_d` and `X_q = X_d = X'_d`.
    pub fn classical(h: f64, d: f64, x_d_p: f64, r_s: f64, omega_s: f64) -> Self {
        Self {
            h,
            d,
            x_d: x_d_p,
            x_d_p,
            x_q: x_d_p,
            x_q_p: x_d_p,
            t_do_p: f64::INFINITY,
            t_qo_p: f64::INFINITY,
            r_s,
            omega_s,
            model: MachineModel::Classical,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.h, self.d, self.x_d, self.x_d_p, self.x_q, self.x_q_p, self.r_s, self.omega_s];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("machine parameters must be finite".into()));
        }
        if self.h <= 0.0 {
            return Err(Error::InvalidParameter(format!("inertia H must be positive, got {}", self.h)));
        }
        if self.x_d_p <= 0.0 {
            return Err(Error::InvalidParameter(format!("X'_d must be positive, got {}", self.x_d_p)));
        }
        match self.model {
            MachineModel::TwoAxis => {
                if !(self.t_do_p > 0.0 && self.t_qo_p > 0.0) || !self.t_do_p.is_finite() || !self.t_qo_p.is_finite() {
                    return Err(Error::InvalidParameter(
                        "two-axis model requires finite positive T'_do and T'_qo".into(),
                    ));
                }
            }
            MachineModel::Classical => {
                if self.x_q_p != self.x_d_p || self.x_q != self.x_d_p {
                    return Err(Error::InvalidParameter(
                        "classical reduction requires X'_q = X'_d and X_q = X'_d".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn dq_determinant(&self) -> Result<f64> {
        let det = self.r_s * self.r_s + self.x_d_p * self.x_q_p;
        if det == 0.0 || !det.is_finite() {
            return Err(Error::Model("singular dq-impedance matrix (R_s^2 + X'_d X'_q = 0)".into()));
        }
        Ok(det)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    /// Mechanical power (pu).
    pub p_m: f64,
    /// Excitation voltage (pu).
    pub e_fd: f64,
}

/// Full machine state. For the classical model `e_q_p`/`e_d_p` hold the
/// constant internal voltages `E'_q0`/`E'_d0`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MachineState {
    pub e_q_p: f64,
    pub e_d_p: f64,
    pub delta: f64,
    pub delta_omega: f64,
}

/// Variables the stator algebra depends on, in this order.
const E_Q: usize = 0;
const E_D: usize = 1;
const DELTA: usize = 2;
const V_RE: usize = 3;
const V_IM: usize = 4;
const NVAR: usize = 5;

/// Stator solution with first derivatives with respect to
/// `(E'_q, E'_d, delta, Re v, Im v)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StatorSolution {
    pub i_d: f64,
    pub i_q: f64,
    pub current: Complex64,
    pub p_e: f64,
    pub d_i_d: [f64; NVAR],
    pub d_i_q: [f64; NVAR],
    pub d_current: [Complex64; NVAR],
    pub d_p_e: [f64; NVAR],
}

pub(crate) fn stator_solution(state: &MachineState, v: Complex64, params: &MachineParams) -> Result<StatorSolution> {
    let det = params.dq_determinant()?;
    let (s, c) = state.delta.sin_cos();
    let (r, xdp, xqp) = (params.r_s, params.x_d_p, params.x_q_p);

    // a = E'_d - V sin(delta - theta), b = E'_q - V cos(delta - theta)
    let a = state.e_d_p - (v.re * s - v.im * c);
    let b = state.e_q_p - (v.re * c + v.im * s);
    let mut da = [0.0; NVAR];
    let mut db = [0.0; NVAR];
    da[E_D] = 1.0;
    db[E_Q] = 1.0;
    da[DELTA] = -(v.re * c + v.im * s);
    db[DELTA] = v.re * s - v.im * c;
    da[V_RE] = -s;
    da[V_IM] = c;
    db[V_RE] = -c;
    db[V_IM] = -s;

    let i_d = (r * a + xqp * b) / det;
    let i_q = (-xdp * a + r * b) / det;
    let mut d_i_d = [0.0; NVAR];
    let mut d_i_q = [0.0; NVAR];
    for k in 0..NVAR {
        d_i_d[k] = (r * da[k] + xqp * db[k]) / det;
        d_i_q[k] = (-xdp * da[k] + r * db[k]) / det;
    }

    // (I_d + j I_q) * exp(j(delta - pi/2)) = (I_d + j I_q) * (sin delta - j cos delta)
    let current = Complex64::new(i_d * s + i_q * c, i_q * s - i_d * c);
    let mut d_current = [Complex64::new(0.0, 0.0); NVAR];
    for k in 0..NVAR {
        d_current[k] = Complex64::new(d_i_d[k] * s + d_i_q[k] * c, d_i_q[k] * s - d_i_d[k] * c);
    }
    d_current[DELTA] += Complex64::new(i_d * c - i_q * s, i_q * c + i_d * s);

    let saliency = xqp - xdp;
    let p_e = state.e_d_p * i_d + state.e_q_p * i_q + saliency * i_d * i_q;
    let mut d_p_e = [0.0; NVAR];
    for k in 0..NVAR {
        d_p_e[k] = state.e_d_p * d_i_d[k] + state.e_q_p * d_i_q[k] + saliency * (d_i_d[k] * i_q + i_d * d_i_q[k]);
    }
    d_p_e[E_D] += i_d;
    d_p_e[E_Q] += i_q;

    Ok(StatorSolution {
        i_d,
        i_q,
        current,
        p_e,
        d_i_d,
        d_i_q,
        d_current,
        d_p_e,
    })
}

/// Solves the stator equations for `(I_d, I_q)`.
pub fn dq_currents(state: &MachineState, v: Complex64, params: &MachineParams) -> Result<(f64, f64)> {
    let sol = stator_solution(state, v, params)?;
    Ok((sol.i_d, sol.i_q))
}

fn require_classical(params: &MachineParams) -> Result<()> {
    if params.model != MachineModel::Classical {
        return Err(Error::InvalidParameter("classical model evaluation on non-classical parameters".into()));
    }
    Ok(())
}

/// Classical update function `(d delta/dt, d delta_omega/dt)`.
pub fn classical_f(state: &MachineState, v: Complex64, params: &MachineParams, u: &ControlInput) -> Result<[f64; 2]> {
    require_classical(params)?;
    let sol = stator_solution(state, v, params)?;
    Ok([
        params.omega_s * state.delta_omega,
        (u.p_m - sol.p_e - params.d * state.delta_omega) / (2.0 * params.h),
    ])
}

/// Classical current injection in network coordinates.
pub fn classical_h(state: &MachineState, v: Complex64, params: &MachineParams) -> Result<Complex64> {
    require_classical(params)?;
    Ok(stator_solution(state, v, params)?.current)
}

/// Two-axis update function for `(E'_q, E'_d, delta, delta_omega)`.
pub fn two_axis_f(state: &MachineState, v: Complex64, params: &MachineParams, u: &ControlInput) -> Result<[f64; 4]> {
    let sol = stator_solution(state, v, params)?;
    Ok([
        (-state.e_q_p - (params.x_d - params.x_d_p) * sol.i_d + u.e_fd) / params.t_do_p,
        (-state.e_d_p + (params.x_q - params.x_q_p) * sol.i_q) / params.t_qo_p,
        params.omega_s * state.delta_omega,
        (u.p_m - sol.p_e - params.d * state.delta_omega) / (2.0 * params.h),
    ])
}

/// Two-axis current injection; identical stator algebra to the classical case.
pub fn two_axis_h(state: &MachineState, v: Complex64, params: &MachineParams) -> Result<Complex64> {
    Ok(stator_solution(state, v, params)?.current)
}
