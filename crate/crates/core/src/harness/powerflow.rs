//! Newton-Raphson load flow in polar coordinates.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::case::{BusKind, CaseFile};
use crate::error::{Error, Result};
use crate::models::{network_currents, AdmittanceMatrix};

pub const POWER_FLOW_TOL: f64 = 1e-10;
pub const POWER_FLOW_MAX_ITER: usize = 20;

#[derive(Debug, Clone)]
pub struct PowerFlowSolution {
    pub voltages: Vec<Complex64>,
    /// Generation at each bus (net injection plus local load).
    pub generation: Vec<Complex64>,
    /// Current injected by each machine, in case machine order.
    pub machine_currents: Vec<Complex64>,
    /// Infinity norm of the power mismatch, evaluated independently of the solver.
    pub mismatch: f64,
    pub iterations: usize,
}

struct Schedule {
    kinds: Vec<BusKind>,
    p: Vec<f64>,
    q: Vec<f64>,
    v_set: Vec<f64>,
    angle_set: Vec<f64>,
}

fn schedule(case: &CaseFile) -> Schedule {
    let loads = case.bus_loads();
    Schedule {
        kinds: case.buses.iter().map(|b| b.kind).collect(),
        p: case.buses.iter().zip(&loads).map(|(b, s)| b.p_gen - s.re).collect(),
        q: case.buses.iter().zip(&loads).map(|(b, s)| b.q_gen - s.im).collect(),
        v_set: case.buses.iter().map(|b| b.v_set).collect(),
        angle_set: case.buses.iter().map(|b| b.angle_set).collect(),
    }
}

/// Infinity norm of the load-flow equations at `v`: active power at
/// non-slack buses, reactive power at PQ buses, and voltage set points at
/// slack and PV buses. Uses complex arithmetic only.
pub fn power_mismatch(case: &CaseFile, y: &AdmittanceMatrix, v: &[Complex64]) -> Result<f64> {
    let sch = schedule(case);
    let current = network_currents(y, v)?;
    let mut worst: f64 = 0.0;
    for i in 0..v.len() {
        let s = v[i] * current[i].conj();
        match sch.kinds[i] {
            BusKind::Slack => {
                worst = worst.max((v[i].norm() - sch.v_set[i]).abs());
                worst = worst.max((v[i].arg() - sch.angle_set[i]).abs());
            }
            BusKind::Pv => {
                worst = worst.max((s.re - sch.p[i]).abs());
                worst = worst.max((v[i].norm() - sch.v_set[i]).abs());
            }
            BusKind::Pq => {
                worst = worst.max((s.re - sch.p[i]).abs());
                worst = worst.max((s.im - sch.q[i]).abs());
            }
        }
    }
    Ok(worst)
}

pub fn power_flow(case: &CaseFile) -> Result<PowerFlowSolution> {
    let y = case.admittance()?;
    let n = case.buses.len();
    let sch = schedule(case);
    let g = y.to_dense().map(|z| z.re);
    let b = y.to_dense().map(|z| z.im);

    let mut vm: Vec<f64> = (0..n).map(|i| if sch.kinds[i] == BusKind::Pq { 1.0 } else { sch.v_set[i] }).collect();
    let mut va: Vec<f64> = (0..n).map(|i| if sch.kinds[i] == BusKind::Slack { sch.angle_set[i] } else { 0.0 }).collect();

    let angle_vars: Vec<usize> = (0..n).filter(|&i| sch.kinds[i] != BusKind::Slack).collect();
    let mag_vars: Vec<usize> = (0..n).filter(|&i| sch.kinds[i] == BusKind::Pq).collect();
    let nv = angle_vars.len() + mag_vars.len();

    let injections = |vm: &[f64], va: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for i in 0..n {
            for k in 0..n {
                let (s, c) = (va[i] - va[k]).sin_cos();
                p[i] += vm[i] * vm[k] * (g[(i, k)] * c + b[(i, k)] * s);
                q[i] += vm[i] * vm[k] * (g[(i, k)] * s - b[(i, k)] * c);
            }
        }
        (p, q)
    };

    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let (p, q) = injections(&vm, &va);
        let mut rhs = DVector::zeros(nv);
        for (r, &i) in angle_vars.iter().enumerate() {
            rhs[r] = sch.p[i] - p[i];
        }
        for (r, &i) in mag_vars.iter().enumerate() {
            rhs[angle_vars.len() + r] = sch.q[i] - q[i];
        }
        let norm = rhs.amax();
        history.push(norm);
        if !norm.is_finite() || iterations >= POWER_FLOW_MAX_ITER {
            return Err(Error::PowerFlowDivergence { iterations, history });
        }
        if norm < POWER_FLOW_TOL {
            break;
        }

        let mut jac = DMatrix::zeros(nv, nv);
        let row_of = |i: usize, mag: bool| -> Option<usize> {
            if mag {
                mag_vars.iter().position(|&k| k == i).map(|r| angle_vars.len() + r)
            } else {
                angle_vars.iter().position(|&k| k == i)
            }
        };
        for i in 0..n {
            let (rp, rq) = (row_of(i, false), row_of(i, true));
            for k in 0..n {
                let (ct, cv) = (row_of(k, false), row_of(k, true));
                let (s, c) = (va[i] - va[k]).sin_cos();
                let (gik, bik) = (g[(i, k)], b[(i, k)]);
                let (dp_dt, dp_dv, dq_dt, dq_dv) = if i == k {
                    (
                        -q[i] - bik * vm[i] * vm[i],
                        p[i] / vm[i] + gik * vm[i],
                        p[i] - gik * vm[i] * vm[i],
                        q[i] / vm[i] - bik * vm[i],
                    )
                } else {
                    (
                        vm[i] * vm[k] * (gik * s - bik * c),
                        vm[i] * (gik * c + bik * s),
                        -vm[i] * vm[k] * (gik * c + bik * s),
                        vm[i] * (gik * s - bik * c),
                    )
                };
                if let Some(r) = rp {
                    if let Some(cc) = ct {
                        jac[(r, cc)] = dp_dt;
                    }
                    if let Some(cc) = cv {
                        jac[(r, cc)] = dp_dv;
                    }
                }
                if let Some(r) = rq {
                    if let Some(cc) = ct {
                        jac[(r, cc)] = dq_dt;
                    }
                    if let Some(cc) = cv {
                        jac[(r, cc)] = dq_dv;
                    }
                }
            }
        }
        let dx = jac
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("power flow Jacobian is singular".into()))?;
        for (r, &i) in angle_vars.iter().enumerate() {
            va[i] += dx[r];
        }
        for (r, &i) in mag_vars.iter().enumerate() {
            vm[i] += dx[angle_vars.len() + r];
        }
        iterations += 1;
    }

    let voltages: Vec<Complex64> = (0..n).map(|i| Complex64::from_polar(vm[i], va[i])).collect();
    let current = network_currents(&y, &voltages)?;
    let loads = case.bus_loads();
    let generation: Vec<Complex64> = (0..n).map(|i| voltages[i] * current[i].conj() + loads[i]).collect();
    let index = case.bus_index();
    let machine_currents = case
        .machines
        .iter()
        .map(|m| {
            let i = index[&m.bus];
            (generation[i] / voltages[i]).conj()
        })
        .collect();
    let mismatch = power_mismatch(case, &y, &voltages)?;
    Ok(PowerFlowSolution { voltages, generation, machine_currents, mismatch, iterations })
}
