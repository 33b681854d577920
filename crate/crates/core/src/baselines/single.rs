//! Accurate solution of one component driven by a prescribed voltage profile.

use crate::error::{Error, Result};
use crate::models::DynamicComponent;
use crate::voltage::VoltageProfile;

pub const SINGLE_COMPONENT_DT: f64 = 1e-4;

/// Integrates `component` from `x0` at `profile.t0` over `dt_end` with
/// classical RK4, using equal substeps no longer than `h`.
pub fn single_component_solve(
    component: &dyn DynamicComponent,
    x0: &[f64],
    profile: &VoltageProfile,
    dt_end: f64,
    h: f64,
) -> Result<Vec<f64>> {
    if x0.len() != component.state_dim() {
        return Err(Error::Dimension { context: "component state", expected: component.state_dim(), actual: x0.len() });
    }
    if !(dt_end >= 0.0) || !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("invalid horizon {dt_end} or step {h}")));
    }
    let n = (dt_end / h - 1e-9).ceil().max(0.0) as usize;
    let mut x = x0.to_vec();
    if n == 0 {
        return Ok(x);
    }
    let step = dt_end / n as f64;
    let f = |t: f64, x: &[f64]| component.update(x, profile.eval(t));
    let axpy = |x: &[f64], a: f64, k: &[f64]| -> Vec<f64> { x.iter().zip(k).map(|(x, k)| x + a * k).collect() };
    for i in 0..n {
        let t = profile.t0 + i as f64 * step;
        let k1 = f(t, &x)?;
        let k2 = f(t + 0.5 * step, &axpy(&x, 0.5 * step, &k1))?;
        let k3 = f(t + 0.5 * step, &axpy(&x, 0.5 * step, &k2))?;
        let k4 = f(t + step, &axpy(&x, step, &k3))?;
        for j in 0..x.len() {
            x[j] += step / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model(format!("non-finite state at t = {}", t + step)));
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::machine_equilibrium;
    use crate::models::{ControlInput, Machine, MachineParams, OMEGA_S_60HZ};
    use num_complex::Complex64;
    use std::f64::consts::PI;

    fn machine(p_m: f64, e: f64) -> Machine {
        let params = MachineParams::classical(3.0, 0.0, 0.2, 0.0, OMEGA_S_60HZ);
        Machine {
            id: "g".into(),
            bus: 0,
            params,
            control: ControlInput { p_m, e_fd: e },
            e_q0: e,
            e_d0: 0.0,
        }
    }

    #[test]
    fn zero_horizon_returns_initial_state() {
        let m = machine(0.5, 1.1);
        let prof = VoltageProfile::constant(0.3, Complex64::new(1.0, 0.0), 2);
        let x0 = [0.4, 0.001];
        assert_eq!(single_component_solve(&m, &x0, &prof, 0.0, 1e-4).unwrap(), x0.to_vec());
    }

    #[test]
    fn equilibrium_is_held() {
        let params = MachineParams::classical(3.0, 1.0, 0.2, 0.0, OMEGA_S_60HZ);
        let v = Complex64::from_polar(1.02, 0.1);
        let (st, u) = machine_equilibrium(&params, v, Complex64::new(0.8, -0.2));
        let m = Machine { id: "g".into(), bus: 0, params, control: u, e_q0: st.e_q_p, e_d0: 0.0 };
        let prof = VoltageProfile::constant(0.0, v, 1);
        let x0 = [st.delta, 0.0];
        let x = single_component_solve(&m, &x0, &prof, 0.2, 1e-4).unwrap();
        assert!((x[0] - x0[0]).abs() < 1e-10 && x[1].abs() < 1e-12);
    }

    #[test]
    fn small_angle_oscillation_frequency() {
        // Infinite bus at angle 0, zero load: delta'' = -(omega_s E V / (X 2H)) sin(delta).
        let (e, v, x, h) = (1.1, 1.0, 0.2, 3.0);
        let m = machine(0.0, e);
        let prof = VoltageProfile::constant(0.0, Complex64::new(v, 0.0), 1);
        let expected = (OMEGA_S_60HZ * e * v / (x * 2.0 * h)).sqrt() / (2.0 * PI);
        // Track sign changes of the speed deviation over several periods.
        let period = 1.0 / expected;
        let dt = period / 200.0;
        let mut state = vec![0.01, 0.0];
        let mut crossings = Vec::new();
        let mut prev = f64::NAN;
        for k in 0..1000 {
            // The profile is constant, so its anchor time does not matter.
            state = single_component_solve(&m, &state, &prof, dt, 1e-4).unwrap();
            let d = state[0];
            if prev.is_finite() && prev > 0.0 && d <= 0.0 {
                let t = (k as f64 + prev / (prev - d)) * dt;
                crossings.push(t);
            }
            prev = d;
        }
        let measured = (crossings.len() - 1) as f64 / (crossings.last().unwrap() - crossings[0]);
        assert!((measured / expected - 1.0).abs() < 0.02, "measured {measured}, expected {expected}");
    }

    #[test]
    fn fourth_order_convergence() {
        let m = machine(0.6, 1.1);
        let prof = VoltageProfile::new(0.0, vec![1.0, -0.05, 0.02], vec![0.0, 0.3, -0.1]).unwrap();
        let x0 = [0.3, 0.002];
        let exact = single_component_solve(&m, &x0, &prof, 0.2, 1e-4).unwrap();
        let hs = [0.01, 0.005, 0.0025];
        let errs: Vec<f64> = hs
            .iter()
            .map(|&h| {
                let x = single_component_solve(&m, &x0, &prof, 0.2, h).unwrap();
                (x[0] - exact[0]).abs().max((x[1] - exact[1]).abs())
            })
            .collect();
        for w in 0..2 {
            let slope = (errs[w] / errs[w + 1]).ln() / (hs[w] / hs[w + 1]).ln();
            assert!((3.5..=4.5).contains(&slope), "slope {slope} from {errs:?}");
        }
    }
}
