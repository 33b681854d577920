//! Simultaneous trapezoidal integration of semi-explicit index-1 DAEs,
//! `dx/dt = f(x, y)`, `0 = g(x, y)`, with a full Newton solve per step.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::models::{DynamicComponent, PowerSystem};
use crate::trajectory::{Trajectory, TrajectorySample};

pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 50;

/// Dense Jacobian blocks of `f` and `g`.
#[derive(Debug, Clone)]
pub struct DaeJacobian {
    pub fx: DMatrix<f64>,
    pub fy: DMatrix<f64>,
    pub gx: DMatrix<f64>,
    pub gy: DMatrix<f64>,
}

pub trait DaeModel {
    fn n_diff(&self) -> usize;
    fn n_alg(&self) -> usize;
    fn f(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>>;
    fn g(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>>;
    fn jacobian(&self, x: &[f64], y: &[f64]) -> Result<DaeJacobian>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaeState {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol: NEWTON_TOL, max_iter: NEWTON_MAX_ITER }
    }
}

/// One trapezoidal step. `f_start` may carry `f(x, y)` at the start state.
pub fn trapezoidal_step_with<M: DaeModel>(
    model: &M,
    state: &DaeState,
    dt: f64,
    f_start: Option<&[f64]>,
    opts: &NewtonOptions,
) -> Result<DaeState> {
    let (nx, ny) = (model.n_diff(), model.n_alg());
    let f0_owned;
    let f0 = match f_start {
        Some(f) => f,
        None => {
            f0_owned = model.f(&state.x, &state.y)?;
            &f0_owned
        }
    };
    let mut x = state.x.clone();
    let mut y = state.y.clone();
    let t_end = state.t + dt;
    let half = 0.5 * dt;
    for _ in 0..=opts.max_iter {
        let f1 = model.f(&x, &y)?;
        let g1 = model.g(&x, &y)?;
        let mut res = DVector::zeros(nx + ny);
        for k in 0..nx {
            res[k] = x[k] - state.x[k] - half * (f0[k] + f1[k]);
        }
        for k in 0..ny {
            res[nx + k] = g1[k];
        }
        if !res.iter().all(|v| v.is_finite()) {
            return Err(Error::Newton { t: t_end, message: "non-finite residual".into() });
        }
        if res.amax() < opts.tol {
            return Ok(DaeState { t: t_end, x, y });
        }
        let jac = model.jacobian(&x, &y)?;
        let mut m = DMatrix::zeros(nx + ny, nx + ny);
        m.view_mut((0, 0), (nx, nx)).copy_from(&(DMatrix::identity(nx, nx) - &jac.fx * half));
        m.view_mut((0, nx), (nx, ny)).copy_from(&(&jac.fy * -half));
        m.view_mut((nx, 0), (ny, nx)).copy_from(&jac.gx);
        m.view_mut((nx, nx), (ny, ny)).copy_from(&jac.gy);
        let dz = m
            .lu()
            .solve(&res)
            .ok_or_else(|| Error::Newton { t: t_end, message: "singular Newton matrix".into() })?;
        for k in 0..nx {
            x[k] -= dz[k];
        }
        for k in 0..ny {
            y[k] -= dz[nx + k];
        }
    }
    Err(Error::Newton { t: t_end, message: format!("no convergence within {} iterations", opts.max_iter) })
}

pub fn trapezoidal_step<M: DaeModel>(model: &M, state: &DaeState, dt: f64) -> Result<DaeState> {
    trapezoidal_step_with(model, state, dt, None, &NewtonOptions::default())
}

impl DaeModel for PowerSystem {
    fn n_diff(&self) -> usize {
        self.state_dims().iter().sum()
    }

    fn n_alg(&self) -> usize {
        2 * self.n_buses()
    }

    fn f(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(x.len());
        let mut off = 0;
        for m in &self.machines {
            let p = m.state_dim();
            let b = m.bus;
            out.extend(m.update(&x[off..off + p], Complex64::new(y[2 * b], y[2 * b + 1]))?);
            off += p;
        }
        Ok(out)
    }

    fn g(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let (xs, v) = self.split(x, y);
        let mismatch = self.current_mismatch(&xs, &v)?;
        Ok(mismatch.iter().flat_map(|z| [z.re, z.im]).collect())
    }

    fn jacobian(&self, x: &[f64], y: &[f64]) -> Result<DaeJacobian> {
        let (nx, ny) = (self.n_diff(), self.n_alg());
        let mut fx = DMatrix::zeros(nx, nx);
        let mut fy = DMatrix::zeros(nx, ny);
        let mut gx = DMatrix::zeros(ny, nx);
        let mut gy = DMatrix::zeros(ny, ny);
        // Network: -Y as real 2x2 blocks [[G, -B], [B, G]].
        for i in 0..self.n_buses() {
            for (j, yij) in self.y.row(i) {
                add_complex_block(&mut gy, 2 * i, 2 * j, -yij);
            }
        }
        for l in &self.loads {
            add_complex_block(&mut gy, 2 * l.bus, 2 * l.bus, -l.y_load);
        }
        let mut off = 0;
        for m in &self.machines {
            let p = m.state_dim();
            let b = m.bus;
            let parts = m.partials(&x[off..off + p], Complex64::new(y[2 * b], y[2 * b + 1]))?;
            fx.view_mut((off, off), (p, p)).copy_from(&parts.df_dx);
            fy.view_mut((off, 2 * b), (p, 2)).copy_from(&parts.df_dv);
            gx.view_mut((2 * b, off), (2, p)).copy_from(&parts.dh_dx);
            let mut blk = gy.view_mut((2 * b, 2 * b), (2, 2));
            blk += parts.dh_dv;
            off += p;
        }
        Ok(DaeJacobian { fx, fy, gx, gy })
    }
}

fn add_complex_block(m: &mut DMatrix<f64>, r: usize, c: usize, z: Complex64) {
    m[(r, c)] += z.re;
    m[(r, c + 1)] -= z.im;
    m[(r + 1, c)] += z.im;
    m[(r + 1, c + 1)] += z.re;
}

impl PowerSystem {
    /// Flat DAE state from per-machine states and bus phasors.
    pub fn dae_state(&self, t: f64, x: &[Vec<f64>], v: &[Complex64]) -> DaeState {
        DaeState { t, x: x.iter().flatten().copied().collect(), y: v.iter().flat_map(|z| [z.re, z.im]).collect() }
    }

    pub(crate) fn split(&self, x: &[f64], y: &[f64]) -> (Vec<Vec<f64>>, Vec<Complex64>) {
        let mut xs = Vec::with_capacity(self.machines.len());
        let mut off = 0;
        for m in &self.machines {
            xs.push(x[off..off + m.state_dim()].to_vec());
            off += m.state_dim();
        }
        let v = y.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect();
        (xs, v)
    }

    pub(crate) fn sample(&self, s: &DaeState) -> TrajectorySample {
        let (x, v) = self.split(&s.x, &s.y);
        TrajectorySample { t: s.t, x, v }
    }
}

/// Fixed-step trapezoidal simulation sampled at every step boundary. When
/// `t_max` is not a multiple of `dt` the last step is shortened and flagged.
pub fn simulate_trapezoidal(
    system: &PowerSystem,
    x0: &[Vec<f64>],
    v0: &[Complex64],
    t_max: f64,
    dt: f64,
) -> Result<Trajectory> {
    system.check_dims(x0, v0)?;
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("step size must be positive, got {dt}")));
    }
    let mut traj = Trajectory::new(system);
    let mut state = system.dae_state(0.0, x0, v0);
    traj.samples.push(system.sample(&state));
    let (n_full, rem) = step_count(t_max, dt);
    let opts = NewtonOptions::default();
    let mut f0 = system.f(&state.x, &state.y)?;
    let total = n_full + usize::from(rem > 0.0);
    for k in 0..total {
        let h = if k < n_full { dt } else { rem };
        match trapezoidal_step_with(system, &state, h, Some(&f0), &opts) {
            Ok(next) => {
                state = next;
                // Keep boundary times exact multiples of dt.
                state.t = if k < n_full { (k + 1) as f64 * dt } else { t_max };
                f0 = system.f(&state.x, &state.y)?;
                traj.samples.push(system.sample(&state));
            }
            Err(e) => {
                traj.failure = Some(e.to_string());
                return Ok(traj);
            }
        }
    }
    traj.partial_final_step = rem > 0.0;
    Ok(traj)
}

/// Number of full steps of `dt` in `t_max` and the remaining partial step.
pub(crate) fn step_count(t_max: f64, dt: f64) -> (usize, f64) {
    let ratio = t_max / dt;
    let n = ratio.round();
    if (ratio - n).abs() < 1e-9 * ratio.max(1.0) {
        (n as usize, 0.0)
    } else {
        let n = ratio.floor();
        (n as usize, t_max - n * dt)
    }
}
