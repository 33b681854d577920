use nalgebra::DMatrix;
use nalgebra_sparse::CscMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::harness::{apply_disturbance, ieee9_case_path, init_equilibrium, load_case, power_flow, Equilibrium};
use crate::models::{AdmittanceMatrix, Machine, MachineModel, PowerSystem};
use crate::pinn::testutil::{machine, random_weights, zero_head};
use crate::pinn::PinnWeights;
use crate::voltage::{unpack, SystemProfile, VoltageProfile};

fn ieee9() -> Equilibrium {
    let case = load_case(ieee9_case_path()).unwrap();
    let pf = power_flow(&case).unwrap();
    init_equilibrium(&case, &pf).unwrap()
}

fn networks_for(system: &PowerSystem, r: usize, seed: u64) -> Vec<PinnWeights> {
    system
        .machines
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let mut w = random_weights(seed + k as u64, m.model(), r, false);
            w.metadata.component_id = m.id.clone();
            w.metadata.control = Some(m.control);
            w.norms.output_scale.iter_mut().for_each(|s| *s *= 0.1);
            w
        })
        .collect()
}

fn perturbed_profile(rng: &mut ChaCha8Rng, t0: f64, v: &[Complex64], r: usize) -> SystemProfile {
    let profiles = v
        .iter()
        .map(|vi| {
            let mut p = VoltageProfile::constant(t0, *vi, r);
            p.magnitude[0] += rng.gen_range(-0.02..0.02);
            p.angle[0] += rng.gen_range(-0.05..0.05);
            for k in 1..=r {
                p.magnitude[k] = rng.gen_range(-0.3..0.3);
                p.angle[k] = rng.gen_range(-1.0..1.0);
            }
            p
        })
        .collect();
    SystemProfile::new(profiles).unwrap()
}

/// One bus, one classical machine with a constant-state network: the exact
/// solution is the constant voltage balancing the machine and shunt currents.
fn one_bus(r: usize) -> (PowerSystem, Vec<PinnWeights>, Vec<Vec<f64>>, Complex64) {
    let mut m: Machine = machine(MachineModel::Classical);
    m.id = "g".into();
    let y_shunt = Complex64::new(1.0, -0.5);
    let y = AdmittanceMatrix::from_triplets(1, [(0, 0, y_shunt)]).unwrap();
    let mut w = random_weights(3, MachineModel::Classical, r, false);
    w.metadata.component_id = "g".into();
    zero_head(&mut w);
    let x0 = vec![0.4, 0.0];
    // (E - v) / (j X) = y v.
    let e = Complex64::from_polar(m.e_q0, x0[0]);
    let jx = Complex64::new(0.0, m.params.x_d_p);
    let v_star = e / (1.0 + jx * y_shunt);
    let sys = PowerSystem::new(y, vec![m], vec![]).unwrap();
    (sys, vec![w], vec![x0], v_star)
}

fn dense(j: &CscMatrix<f64>) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(j.nrows(), j.ncols());
    for (r, c, v) in j.triplet_iter() {
        d[(r, c)] += v;
    }
    d
}

#[test]
fn query_point_examples() {
    let q = query_points(0.0, 0.2, 2);
    assert!((q[0] - 0.05).abs() < 1e-15 && (q[1] - 0.15).abs() < 1e-15);
    assert_eq!(query_points(1.0, 0.1, 1), vec![1.05]);
    let q = query_points(0.3, 0.25, 7);
    for j in 0..7 {
        assert!((q[j] + q[6 - j] - 2.0 * (0.3 + 0.125)).abs() < 1e-14);
    }
}

#[test]
fn midpoint_rule_is_exact_for_affine_integrands() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let (a, b) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let t0: f64 = rng.gen_range(0.0..10.0);
        let dt = rng.gen_range(0.001..0.3);
        let s = rng.gen_range(1..10);
        let exact = a * dt + b * ((t0 + dt).powi(2) - t0 * t0) / 2.0;
        let approx = midpoint_integral(t0, dt, s, |t| a + b * t);
        assert!((approx - exact).abs() < 1e-12, "{approx} vs {exact}");
    }
}

#[test]
fn objective_scales_squared_residual() {
    assert!((objective(&[1.0, 2.0], 0.3, 3) - 0.5).abs() < 1e-15);
}

#[test]
fn residual_and_jacobian_dimensions() {
    let eq = ieee9();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for r in 0..=3 {
        let nets = networks_for(&eq.system, r, 10);
        for s in 1..=8 {
            let cfg = StepConfig { s, r, dt: 0.1, ..Default::default() };
            let st = Stepper::new(&eq.system, &nets, cfg).unwrap();
            let xi = perturbed_profile(&mut rng, 0.0, &eq.v0, r);
            let asm = st.assemble(&eq.x0, &xi).unwrap();
            assert_eq!(asm.rho.len(), 2 * 9 * s);
            assert_eq!(asm.jacobian.nrows(), 2 * 9 * s);
            assert_eq!(asm.jacobian.ncols(), 2 * (r + 1) * 9);
            assert!(asm.rho.iter().chain(asm.jacobian.values()).all(|v| v.is_finite()));
        }
    }
    let nets = networks_for(&eq.system, 2, 10);
    let xi = SystemProfile::flat(0.0, &eq.v0, 2);
    let cfg = StepConfig { s: 3, r: 2, dt: 0.1, ..Default::default() };
    assert_eq!(residual(&xi, &eq.system, &eq.x0, &nets, &cfg).unwrap().len(), 54);
    let j = jacobian(&xi, &eq.system, &eq.x0, &nets, &cfg).unwrap();
    assert_eq!((j.nrows(), j.ncols()), (54, 54));
}

#[test]
fn jacobian_block_sparsity_matches_adjacency() {
    let eq = ieee9();
    let (r, s) = (2, 3);
    let nets = networks_for(&eq.system, r, 20);
    let st = Stepper::new(&eq.system, &nets, StepConfig { r, s, dt: 0.1, ..Default::default() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let asm = st.assemble(&eq.x0, &perturbed_profile(&mut rng, 0.0, &eq.v0, r)).unwrap();
    let w = 2 * (r + 1);
    let mut blocks = vec![vec![false; 9]; 9];
    for (row, col, v) in asm.jacobian.triplet_iter() {
        if *v != 0.0 {
            blocks[row / (2 * s)][col / w] = true;
        }
    }
    for i in 0..9 {
        for k in 0..9 {
            let expected = i == k || eq.system.y.is_coupled(i, k);
            assert_eq!(blocks[i][k], expected, "block ({i}, {k})");
        }
    }
}

#[test]
fn jacobian_matches_finite_differences() {
    let eq = ieee9();
    let dist = apply_disturbance(&eq.system, 0, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cases = 0;
    for case in 0..100 {
        let r = [1, 2][case % 2];
        let s = rng.gen_range(1..=r + 4);
        let sys = if case % 3 == 0 { &eq.system } else { &dist };
        let nets = networks_for(sys, r, 100 + case as u64);
        let dt = rng.gen_range(0.01..0.3);
        let t0 = rng.gen_range(0.0..3.0);
        let st = Stepper::new(sys, &nets, StepConfig { r, s, dt, ..Default::default() }).unwrap();
        let xi = perturbed_profile(&mut rng, t0, &eq.v0, r);
        let jac = dense(&st.assemble(&eq.x0, &xi).unwrap().jacobian);
        let base = xi.pack();
        let f = |c: usize, d: f64| {
            let mut p = base.clone();
            p[c] += d;
            st.residual_packed(&eq.x0, t0, &p).unwrap()
        };
        for c in 0..base.len() {
            // Sixth-order central differences on a ladder of steps; the
            // residual is O(10), so round-off rules out a single small step.
            let fds: Vec<Vec<f64>> = [1e-2, 3e-3, 1e-3, 3e-4]
                .iter()
                .map(|&h| {
                    let (p1, m1, p2, m2, p3, m3) = (f(c, h), f(c, -h), f(c, 2.0 * h), f(c, -2.0 * h), f(c, 3.0 * h), f(c, -3.0 * h));
                    (0..p1.len())
                        .map(|k| (45.0 * (p1[k] - m1[k]) - 9.0 * (p2[k] - m2[k]) + (p3[k] - m3[k])) / (60.0 * h))
                        .collect()
                })
                .collect();
            for row in 0..jac.nrows() {
                let a = jac[(row, c)];
                let best = fds.iter().map(|fd| (a - fd[row]).abs()).fold(f64::INFINITY, f64::min);
                if a.abs() > 1e-8 {
                    assert!(best <= 1e-5 * a.abs(), "case {case} ({row}, {c}): {a}, FD error {best}");
                } else {
                    assert!(best < 1e-8, "case {case} ({row}, {c}): {a}, FD error {best}");
                }
            }
        }
        cases += 1;
    }
    assert!(cases >= 100);
}

#[test]
fn gauss_newton_examples() {
    let j = CscMatrix::from(&nalgebra_sparse::CooMatrix::try_from_triplets(1, 1, vec![0], vec![0], vec![2.0]).unwrap());
    let u = gauss_newton_update(&j, &[4.0], 0.0).unwrap();
    assert_eq!(u.delta, vec![-2.0]);
    assert_eq!(u.damping, 0.0);
    let u = gauss_newton_update(&j, &[0.0], 0.0).unwrap();
    assert_eq!(u.delta, vec![0.0]);
}

#[test]
fn gauss_newton_matches_dense_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let (m, n) = (rng.gen_range(5..20), rng.gen_range(1..5));
        let m = m.max(n);
        let jd = DMatrix::from_fn(m, n, |i, k| if i == k { 3.0 } else { rng.gen_range(-1.0..1.0) });
        let rho: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let j = CscMatrix::from(&jd);
        for lambda in [0.0, 0.1] {
            let u = gauss_newton_update(&j, &rho, lambda).unwrap();
            let a = jd.transpose() * &jd + DMatrix::identity(n, n) * lambda;
            let b = -(jd.transpose() * nalgebra::DVector::from_column_slice(&rho));
            let x = a.lu().solve(&b).unwrap();
            for k in 0..n {
                assert!((u.delta[k] - x[k]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn singular_normal_equations_escalate_damping() {
    // Second column is empty.
    let j = CscMatrix::from(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]));
    let u = gauss_newton_update(&j, &[1.0, 1.0], 0.0).unwrap();
    assert!(u.damping > 0.0 && u.damping <= MAX_DAMPING);
    assert!((u.delta[0] + 0.6).abs() < 1e-6);
    assert!(u.delta[1].abs() < 1e-12);
}

#[test]
fn init_profile_examples() {
    let v = Complex64::from_polar(1.04, 0.02);
    let p = init_profile(0.0, 2, &[v], None);
    assert!((p.profiles[0].magnitude[0] - 1.04).abs() < 1e-15 && (p.profiles[0].angle[0] - 0.02).abs() < 1e-15);
    assert!(p.profiles[0].magnitude[1..].iter().chain(&p.profiles[0].angle[1..]).all(|&c| c == 0.0));

    let flat = init_profile(0.0, 2, &[v], None);
    assert_eq!(init_profile(0.5, 2, &[], Some(&flat)).profiles[0].coefficients(), flat.profiles[0].coefficients());

    let lin = SystemProfile::new(vec![VoltageProfile::new(1.0, vec![1.0, 0.1], vec![0.0, 0.0]).unwrap()]).unwrap();
    let w = init_profile(1.2, 1, &[], Some(&lin));
    assert!((w.profiles[0].magnitude[0] - 1.02).abs() < 1e-15);
    assert_eq!(w.profiles[0].magnitude[1], 0.1);
    assert_eq!(w.t0, 1.2);
}

#[test]
fn exact_balance_gives_zero_residual_and_one_iteration() {
    for r in 0..=2 {
        let (sys, nets, x0, v_star) = one_bus(r);
        let cfg = StepConfig { r, s: r + 1, dt: 0.1, ..Default::default() };
        let st = Stepper::new(&sys, &nets, cfg).unwrap();
        let xi = SystemProfile::flat(0.0, &[v_star], r);
        let rho = st.residual(&x0, &xi).unwrap();
        assert!(rho.iter().all(|v| v.abs() < 1e-14), "{rho:?}");
        let res = st.step(0.0, &x0, &[v_star], None, None).unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations, 1);
        assert!(res.delta_norms[0] < 1e-13);
    }
}

#[test]
fn step_converges_to_the_balanced_voltage() {
    let (sys, nets, x0, v_star) = one_bus(2);
    let st = Stepper::new(&sys, &nets, StepConfig { r: 2, s: 3, dt: 0.1, ..Default::default() }).unwrap();
    let res = st.step(0.0, &x0, &[Complex64::from_polar(1.0, 0.0)], None, None).unwrap();
    assert!(res.converged);
    assert!((res.v_end[0] - v_star).norm() < 1e-10);
    assert_eq!(res.x_end, x0);
    assert!(res.objective() < 1e-20);
    assert_eq!(res.objective_history.len(), res.iterations + 1);
}

#[test]
fn step_is_deterministic() {
    let eq = ieee9();
    let nets = networks_for(&eq.system, 2, 7);
    let cfg = StepConfig { r: 2, s: 4, dt: 0.05, k_max: 5, ..Default::default() };
    let a = step(&eq.system, 0.0, &eq.x0, &eq.v0, &cfg, &nets).unwrap();
    let b = step(&eq.system, 0.0, &eq.x0, &eq.v0, &cfg, &nets).unwrap();
    assert_eq!(a.xi_final.pack(), b.xi_final.pack());
    assert_eq!(a.objective_history, b.objective_history);
    assert_eq!(a.x_end, b.x_end);
}

#[test]
fn simulate_counts_steps_and_flags_partial_steps() {
    let (sys, nets, x0, v_star) = one_bus(2);
    let cfg = StepConfig { r: 2, s: 3, dt: 0.05, ..Default::default() };
    let sim = simulate(&sys, &x0, &[v_star], 2.5, &cfg, &nets).unwrap();
    assert_eq!(sim.steps.len(), 50);
    assert_eq!(sim.trajectory.samples.len(), 51);
    assert!(!sim.trajectory.partial_final_step && sim.trajectory.failure.is_none());
    assert!(sim.all_converged());

    let cfg = StepConfig { dt: 0.3, ..cfg };
    let sim = simulate(&sys, &x0, &[v_star], 2.5, &cfg, &nets).unwrap();
    assert_eq!(sim.steps.len(), 9);
    assert!(sim.trajectory.partial_final_step);
    assert!((sim.trajectory.last().unwrap().t - 2.5).abs() < 1e-12);

    let st = Stepper::new(&sys, &nets, cfg).unwrap();
    let s3 = sim.step_at(0.75).unwrap();
    let (x, v) = s3.dense(&st, 0.75).unwrap();
    assert_eq!(x, x0);
    assert!((v[0] - v_star).norm() < 1e-10);
}

#[test]
fn steps_beyond_the_trained_range_are_rejected() {
    let (sys, nets, x0, v_star) = one_bus(2);
    let cfg = StepConfig { r: 2, s: 3, dt: 0.31, ..Default::default() };
    let err = step(&sys, 0.0, &x0, &[v_star], &cfg, &nets).unwrap_err();
    assert!(matches!(err, crate::Error::Domain { .. }), "{err}");
    let sim = simulate(&sys, &x0, &[v_star], 1.0, &cfg, &nets).unwrap();
    assert!(sim.trajectory.failure.is_some());
    assert_eq!(sim.trajectory.samples.len(), 1);
}

#[test]
fn mismatched_networks_are_rejected() {
    let (sys, nets, ..) = one_bus(2);
    assert!(Stepper::new(&sys, &nets, StepConfig { r: 1, ..Default::default() }).is_err());
    assert!(Stepper::<PinnWeights>::new(&sys, &[], StepConfig::default()).is_err());
    assert!(Stepper::new(&sys, &nets, StepConfig { s: 0, ..Default::default() }).is_err());
}

#[test]
fn nonpositive_magnitude_is_a_profile_error() {
    let (sys, nets, x0, _) = one_bus(1);
    let st = Stepper::new(&sys, &nets, StepConfig { r: 1, s: 2, dt: 0.1, ..Default::default() }).unwrap();
    let xi = unpack(&[1.0, 0.0, -20.0, 0.0], 1, 1, 0.0).unwrap();
    assert!(matches!(st.residual(&x0, &xi), Err(crate::Error::Profile(_))));
}

#[test]
fn diagnostics_csv_layout() {
    let (sys, nets, x0, _) = one_bus(1);
    let st = Stepper::new(&sys, &nets, StepConfig { r: 1, s: 2, dt: 0.1, ..Default::default() }).unwrap();
    let res = st.step(0.0, &x0, &[Complex64::new(1.0, 0.0)], None, None).unwrap();
    let mut out = Vec::new();
    write_diagnostics(&[res.clone()], &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], format!("# schema: {DIAGNOSTICS_SCHEMA}"));
    assert_eq!(lines[1], "step,iteration,objective,delta_xi_inf_norm");
    assert_eq!(lines.len(), 2 + res.iterations + 1);
    assert!(lines[2].starts_with("0,0,") && lines[2].ends_with(','));
}

#[test]
fn objective_decreases_for_a_determined_system() {
    let (sys, nets, x0, _) = one_bus(2);
    let st = Stepper::new(&sys, &nets, StepConfig { r: 2, s: 3, dt: 0.1, ..Default::default() }).unwrap();
    let res = st.step(0.0, &x0, &[Complex64::from_polar(0.9, 0.3)], None, None).unwrap();
    for w in res.objective_history.windows(2) {
        assert!(w[1] <= w[0] || w[1] < 1e-25, "{:?}", res.objective_history);
    }
}
