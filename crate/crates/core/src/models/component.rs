use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::machine::{stator_solution, ControlInput, MachineModel, MachineParams, MachineState};
use crate::error::{Error, Result};

/// First derivatives of a dynamic component's update and injection
/// functions. Voltage derivatives are with respect to `(Re v, Im v)`;
/// injection rows are `(Re i, Im i)`.
#[derive(Debug, Clone)]
pub struct ComponentPartials {
    pub df_dx: DMatrix<f64>,
    pub df_dv: DMatrix<f64>,
    pub dh_dx: DMatrix<f64>,
    pub dh_dv: Matrix2<f64>,
}

/// A component whose injection depends on a differential state,
/// `i = h(x, v)` with `dx/dt = f(x, v)` under fixed control inputs.
pub trait DynamicComponent: Send + Sync {
    fn id(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn update(&self, x: &[f64], v: Complex64) -> Result<Vec<f64>>;
    fn injection(&self, x: &[f64], v: Complex64) -> Result<Complex64>;
    fn partials(&self, x: &[f64], v: Complex64) -> Result<ComponentPartials>;
}

/// A synchronous machine connected to one bus, with its control inputs and,
/// for the classical model, its constant internal voltages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Machine {
    pub id: String,
    pub bus: usize,
    pub params: MachineParams,
    pub control: ControlInput,
    /// Constant `E'_q0` of the classical model.
    #[serde(default)]
    pub e_q0: f64,
    /// Constant `E'_d0` of the classical model (zero on the integral manifold).
    #[serde(default)]
    pub e_d0: f64,
}

impl Machine {
    pub fn model(&self) -> MachineModel {
        self.params.model
    }

    /// Index of the rotor-speed deviation within the state vector.
    pub fn speed_index(&self) -> usize {
        self.state_dim() - 1
    }

    /// Index of the rotor angle within the state vector.
    pub fn angle_index(&self) -> usize {
        self.state_dim() - 2
    }

    pub fn machine_state(&self, x: &[f64]) -> Result<MachineState> {
        match self.params.model {
            MachineModel::Classical => {
                check_len(x, 2)?;
                Ok(MachineState { e_q_p: self.e_q0, e_d_p: self.e_d0, delta: x[0], delta_omega: x[1] })
            }
            MachineModel::TwoAxis => {
                check_len(x, 4)?;
                Ok(MachineState { e_q_p: x[0], e_d_p: x[1], delta: x[2], delta_omega: x[3] })
            }
        }
    }
}

fn check_len(x: &[f64], expected: usize) -> Result<()> {
    if x.len() != expected {
        return Err(Error::Dimension { context: "machine state", expected, actual: x.len() });
    }
    Ok(())
}

impl DynamicComponent for Machine {
    fn id(&self) -> &str {
        &self.id
    }

    fn state_dim(&self) -> usize {
        self.params.model.state_dim()
    }

    fn update(&self, x: &[f64], v: Complex64) -> Result<Vec<f64>> {
        let st = self.machine_state(x)?;
        let p = &self.params;
        let sol = stator_solution(&st, v, p)?;
        let swing = [
            p.omega_s * st.delta_omega,
            (self.control.p_m - sol.p_e - p.d * st.delta_omega) / (2.0 * p.h),
        ];
        Ok(match p.model {
            MachineModel::Classical => swing.to_vec(),
            MachineModel::TwoAxis => vec![
                (-st.e_q_p - (p.x_d - p.x_d_p) * sol.i_d + self.control.e_fd) / p.t_do_p,
                (-st.e_d_p + (p.x_q - p.x_q_p) * sol.i_q) / p.t_qo_p,
                swing[0],
                swing[1],
            ],
        })
    }

    fn injection(&self, x: &[f64], v: Complex64) -> Result<Complex64> {
        let st = self.machine_state(x)?;
        Ok(stator_solution(&st, v, &self.params)?.current)
    }

    fn partials(&self, x: &[f64], v: Complex64) -> Result<ComponentPartials> {
        let st = self.machine_state(x)?;
        let p = &self.params;
        let sol = stator_solution(&st, v, p)?;
        let n = self.state_dim();
        // Map from state index to stator variable index (E'_q, E'_d, delta).
        let stator_var: Vec<Option<usize>> = match p.model {
            MachineModel::Classical => vec![Some(2), None],
            MachineModel::TwoAxis => vec![Some(0), Some(1), Some(2), None],
        };
        let mut df_dx = DMatrix::zeros(n, n);
        let mut df_dv = DMatrix::zeros(n, 2);
        let mut dh_dx = DMatrix::zeros(2, n);
        let (iw, id) = (n - 1, n - 2);
        let two_h = 2.0 * p.h;

        for (col, var) in stator_var.iter().enumerate() {
            if let Some(k) = *var {
                dh_dx[(0, col)] = sol.d_current[k].re;
                dh_dx[(1, col)] = sol.d_current[k].im;
                df_dx[(iw, col)] = -sol.d_p_e[k] / two_h;
            }
        }
        df_dx[(id, iw)] = p.omega_s;
        df_dx[(iw, iw)] = -p.d / two_h;
        for (c, k) in [3usize, 4].into_iter().enumerate() {
            df_dv[(iw, c)] = -sol.d_p_e[k] / two_h;
        }
        let dh_dv = Matrix2::new(sol.d_current[3].re, sol.d_current[4].re, sol.d_current[3].im, sol.d_current[4].im);

        if p.model == MachineModel::TwoAxis {
            let (kd, kq) = (p.x_d - p.x_d_p, p.x_q - p.x_q_p);
            for col in 0..3 {
                let k = stator_var[col].unwrap();
                df_dx[(0, col)] = -kd * sol.d_i_d[k] / p.t_do_p;
                df_dx[(1, col)] = kq * sol.d_i_q[k] / p.t_qo_p;
            }
            df_dx[(0, 0)] -= 1.0 / p.t_do_p;
            df_dx[(1, 1)] -= 1.0 / p.t_qo_p;
            for (c, k) in [3usize, 4].into_iter().enumerate() {
                df_dv[(0, c)] = -kd * sol.d_i_d[k] / p.t_do_p;
                df_dv[(1, c)] = kq * sol.d_i_q[k] / p.t_qo_p;
            }
        }
        Ok(ComponentPartials { df_dx, df_dv, dh_dx, dh_dv })
    }
}
