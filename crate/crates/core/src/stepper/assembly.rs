//! Residual and Jacobian of the stacked current balance.

use nalgebra::DMatrix;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use num_complex::Complex64;

use super::predictor::ComponentPredictor;
use super::{query_points, StepConfig};
use crate::error::{Error, Result};
use crate::models::{DynamicComponent, Machine, MachineModel, PowerSystem};
use crate::pinn::{PinnInput, PinnWeights};
use crate::voltage::{unpack, SystemProfile};

/// Stacked residual, ordered bus-major then query point with `(Re, Im)`
/// interleaved, and its Jacobian with respect to the packed coefficients.
#[derive(Debug, Clone)]
pub struct ResidualAssembly {
    pub rho: Vec<f64>,
    pub jacobian: CscMatrix<f64>,
}

/// Buses coupled to each bus through the admittance matrix, including itself,
/// in ascending order.
pub fn jacobian_block_pattern(system: &PowerSystem) -> Vec<Vec<usize>> {
    (0..system.n_buses())
        .map(|i| {
            let mut cols: Vec<usize> = system.y.row(i).filter(|(_, y)| *y != Complex64::new(0.0, 0.0)).map(|(j, _)| j).collect();
            cols.push(i);
            cols.sort_unstable();
            cols.dedup();
            cols
        })
        .collect()
}

/// Evaluates the residual and Jacobian for a fixed system, network set and
/// step configuration.
pub struct Stepper<'a, P: ComponentPredictor = PinnWeights> {
    pub(crate) system: &'a PowerSystem,
    pub(crate) networks: &'a [P],
    pub(crate) cfg: StepConfig,
    controls: Vec<Option<Vec<f64>>>,
    pattern: Vec<Vec<usize>>,
}

fn control_vector(m: &Machine, w: &impl ComponentPredictor) -> Option<Vec<f64>> {
    w.takes_control().then(|| match m.model() {
        MachineModel::Classical => vec![m.control.p_m],
        MachineModel::TwoAxis => vec![m.control.p_m, m.control.e_fd],
    })
}

impl<'a, P: ComponentPredictor> Stepper<'a, P> {
    /// `networks[k]` drives `system.machines[k]`.
    pub fn new(system: &'a PowerSystem, networks: &'a [P], cfg: StepConfig) -> Result<Self> {
        cfg.validate()?;
        if networks.len() != system.machines.len() {
            return Err(Error::Dimension { context: "networks", expected: system.machines.len(), actual: networks.len() });
        }
        for (m, w) in system.machines.iter().zip(networks) {
            w.check_compatible(m, cfg.r)?;
        }
        let controls = system.machines.iter().zip(networks).map(|(m, w)| control_vector(m, w)).collect();
        Ok(Self { system, networks, cfg, controls, pattern: jacobian_block_pattern(system) })
    }

    pub fn config(&self) -> &StepConfig {
        &self.cfg
    }

    pub fn system(&self) -> &PowerSystem {
        self.system
    }

    /// Fails when `dt` exceeds the trained range of any network.
    pub fn check_domain(&self, dt: f64) -> Result<()> {
        for w in self.networks {
            if dt > w.dt_max() * (1.0 + 1e-12) {
                return Err(Error::Domain { component: w.component_id().to_string(), dt, dt_max: w.dt_max() });
            }
        }
        Ok(())
    }

    fn check_profile(&self, xi: &SystemProfile) -> Result<()> {
        if xi.n_buses() != self.system.n_buses() {
            return Err(Error::Dimension { context: "bus profiles", expected: self.system.n_buses(), actual: xi.n_buses() });
        }
        if xi.order != self.cfg.r {
            return Err(Error::Dimension { context: "profile order", expected: self.cfg.r, actual: xi.order });
        }
        Ok(())
    }

    /// Network input of machine `k` at `tau` into the step.
    pub(crate) fn input(&self, k: usize, tau: f64, x0: &[f64], xi: &SystemProfile) -> PinnInput {
        let m = &self.system.machines[k];
        PinnInput { dt: tau, x0: x0.to_vec(), xi: xi.profiles[m.bus].coefficients(), u: self.controls[k].clone() }
    }

    /// Machine states at `t` within the step starting at `xi.t0`.
    pub fn states_at(&self, t: f64, x0: &[Vec<f64>], xi: &SystemProfile) -> Result<Vec<Vec<f64>>> {
        (0..self.networks.len()).map(|k| Ok(self.networks[k].evaluate(&self.input(k, t - xi.t0, &x0[k], xi), false)?.x)).collect()
    }

    pub fn residual(&self, x0: &[Vec<f64>], xi: &SystemProfile) -> Result<Vec<f64>> {
        Ok(self.evaluate(x0, xi, self.cfg.dt, false)?.0)
    }

    pub fn assemble(&self, x0: &[Vec<f64>], xi: &SystemProfile) -> Result<ResidualAssembly> {
        self.assemble_for(x0, xi, self.cfg.dt)
    }

    pub(crate) fn assemble_for(&self, x0: &[Vec<f64>], xi: &SystemProfile, dt: f64) -> Result<ResidualAssembly> {
        let (rho, jac) = self.evaluate(x0, xi, dt, true)?;
        Ok(ResidualAssembly { rho, jacobian: jac.expect("requested") })
    }

    pub(crate) fn residual_for(&self, x0: &[Vec<f64>], xi: &SystemProfile, dt: f64) -> Result<Vec<f64>> {
        Ok(self.evaluate(x0, xi, dt, false)?.0)
    }

    fn evaluate(
        &self,
        x0: &[Vec<f64>],
        xi: &SystemProfile,
        dt: f64,
        with_jacobian: bool,
    ) -> Result<(Vec<f64>, Option<CscMatrix<f64>>)> {
        self.check_domain(dt)?;
        self.check_profile(xi)?;
        self.system.check_dims(x0, &vec![Complex64::new(0.0, 0.0); self.system.n_buses()])?;
        let n = self.system.n_buses();
        let s = self.cfg.s;
        let width = xi.bus_width();
        let ts = query_points(xi.t0, dt, s);
        for p in &xi.profiles {
            p.check_positive(&ts)?;
        }
        let zero = Complex64::new(0.0, 0.0);

        // v[i][j], and dv/dxi for bus i at query j.
        let v: Vec<Vec<Complex64>> = xi.profiles.iter().map(|p| ts.iter().map(|&t| p.eval(t)).collect()).collect();
        let sens: Vec<Vec<Vec<Complex64>>> = if with_jacobian {
            xi.profiles.iter().map(|p| ts.iter().map(|&t| p.sensitivity(t)).collect()).collect()
        } else {
            Vec::new()
        };

        // Mismatch per bus and query, and complex derivative blocks aligned
        // with `pattern[i]`: blocks[i][b][(j, c)].
        let mut mis = vec![vec![zero; s]; n];
        let mut blocks: Vec<Vec<DMatrix<Complex64>>> = if with_jacobian {
            self.pattern.iter().map(|cols| vec![DMatrix::from_element(s, width, zero); cols.len()]).collect()
        } else {
            Vec::new()
        };
        let diag_idx: Vec<usize> = (0..n).map(|i| self.pattern[i].binary_search(&i).expect("diagonal present")).collect();

        for i in 0..n {
            for (k, y) in self.system.y.row(i) {
                for j in 0..s {
                    mis[i][j] -= y * v[k][j];
                }
                if with_jacobian {
                    let b = self.pattern[i].binary_search(&k).expect("coupled bus in pattern");
                    for j in 0..s {
                        for c in 0..width {
                            blocks[i][b][(j, c)] -= y * sens[k][j][c];
                        }
                    }
                }
            }
        }
        for l in &self.system.loads {
            let i = l.bus;
            for j in 0..s {
                mis[i][j] += crate::models::load_h(v[i][j], l);
                if with_jacobian {
                    for c in 0..width {
                        blocks[i][diag_idx[i]][(j, c)] -= l.y_load * sens[i][j][c];
                    }
                }
            }
        }
        for (k, m) in self.system.machines.iter().enumerate() {
            let i = m.bus;
            let p = m.state_dim();
            for j in 0..s {
                let inp = self.input(k, ts[j] - xi.t0, &x0[k], xi);
                let ev = self.networks[k].evaluate(&inp, with_jacobian)?;
                mis[i][j] += m.injection(&ev.x, v[i][j])?;
                if let Some(jn) = ev.jacobian {
                    let parts = m.partials(&ev.x, v[i][j])?;
                    let blk = &mut blocks[i][diag_idx[i]];
                    for c in 0..width {
                        let (mut re, mut im) = (0.0, 0.0);
                        for q in 0..p {
                            let dx = jn[(q, 1 + p + c)];
                            re += parts.dh_dx[(0, q)] * dx;
                            im += parts.dh_dx[(1, q)] * dx;
                        }
                        let sv = sens[i][j][c];
                        re += parts.dh_dv[(0, 0)] * sv.re + parts.dh_dv[(0, 1)] * sv.im;
                        im += parts.dh_dv[(1, 0)] * sv.re + parts.dh_dv[(1, 1)] * sv.im;
                        blk[(j, c)] += Complex64::new(re, im);
                    }
                }
            }
        }

        let mut rho = Vec::with_capacity(2 * n * s);
        for row in &mis {
            for m in row {
                rho.push(m.re);
                rho.push(m.im);
            }
        }
        if !rho.iter().all(|r| r.is_finite()) {
            return Err(Error::Model("non-finite current mismatch".into()));
        }
        let jac = with_jacobian.then(|| {
            let mut coo = CooMatrix::new(2 * n * s, width * n);
            for i in 0..n {
                for (b, &k) in self.pattern[i].iter().enumerate() {
                    let blk = &blocks[i][b];
                    for j in 0..s {
                        let row = 2 * (i * s + j);
                        for c in 0..width {
                            coo.push(row, k * width + c, blk[(j, c)].re);
                            coo.push(row + 1, k * width + c, blk[(j, c)].im);
                        }
                    }
                }
            }
            CscMatrix::from(&coo)
        });
        Ok((rho, jac))
    }
}

/// Stacked current-balance residual for a packed or structured profile.
pub fn residual(
    xi: &SystemProfile,
    system: &PowerSystem,
    x0_all: &[Vec<f64>],
    weights_all: &[PinnWeights],
    cfg: &StepConfig,
) -> Result<Vec<f64>> {
    Stepper::new(system, weights_all, cfg.clone())?.residual(x0_all, xi)
}

/// Exact Jacobian of [`residual`] with respect to the packed coefficients.
pub fn jacobian(
    xi: &SystemProfile,
    system: &PowerSystem,
    x0_all: &[Vec<f64>],
    weights_all: &[PinnWeights],
    cfg: &StepConfig,
) -> Result<CscMatrix<f64>> {
    Ok(Stepper::new(system, weights_all, cfg.clone())?.assemble(x0_all, xi)?.jacobian)
}

impl<P: ComponentPredictor> Stepper<'_, P> {
    /// Residual as a function of the packed coefficient vector.
    pub fn residual_packed(&self, x0: &[Vec<f64>], t0: f64, xi: &[f64]) -> Result<Vec<f64>> {
        let prof = unpack(xi, self.system.n_buses(), self.cfg.r, t0)?;
        self.residual(x0, &prof)
    }
}
