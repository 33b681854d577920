use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::Objective;
use super::testutil::{machine, random_input, random_weights, reference_forward, zero_head};
use super::*;
use crate::models::{DynamicComponent, MachineModel};

const MODELS: [MachineModel; 2] = [MachineModel::Classical, MachineModel::TwoAxis];

fn perturbed(inp: &PinnInput, k: usize, h: f64) -> PinnInput {
    let mut raw = inp.raw();
    raw[k] += h;
    let p = inp.x0.len();
    let nxi = inp.xi.len();
    PinnInput {
        dt: raw[0],
        x0: raw[1..1 + p].to_vec(),
        xi: raw[1 + p..1 + p + nxi].to_vec(),
        u: inp.u.as_ref().map(|_| raw[1 + p + nxi..].to_vec()),
    }
}

/// Central difference and its fourth-order (5-point) refinement.
fn differences(f: &impl Fn(f64) -> f64, h: f64) -> (f64, f64) {
    let (p1, m1, p2, m2) = (f(h), f(-h), f(2.0 * h), f(-2.0 * h));
    ((p1 - m1) / (2.0 * h), (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h))
}

#[test]
fn forward_matches_straight_line_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..50 {
        let w = random_weights(case, MODELS[case as usize % 2], 1 + case as usize % 3, case % 3 == 0);
        let inp = random_input(&mut rng, &w);
        let a = w.forward(&inp).unwrap();
        let b = reference_forward(&w, &inp);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0), "{a:?} vs {b:?}");
        }
    }
}

#[test]
fn zero_step_returns_initial_state_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..1000 {
        let w = random_weights(case, MODELS[case as usize % 2], 2, case % 5 == 0);
        let mut inp = random_input(&mut rng, &w);
        inp.dt = 0.0;
        let x = w.forward(&inp).unwrap();
        for (a, b) in x.iter().zip(&inp.x0) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn zero_head_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut w = random_weights(7, MachineModel::Classical, 2, false);
    zero_head(&mut w);
    for _ in 0..20 {
        let inp = random_input(&mut rng, &w);
        assert_eq!(w.forward(&inp).unwrap(), inp.x0);
        assert!(w.time_derivative(&inp).unwrap().iter().all(|v| *v == 0.0));
        let j = w.input_sensitivity(&inp).unwrap();
        let p = inp.x0.len();
        assert_eq!(j.view((0, 1), (p, p)).into_owned(), DMatrix::identity(p, p));
    }
}

#[test]
fn constant_head_gives_constant_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut w = random_weights(8, MachineModel::Classical, 2, false);
    let last = w.layers.last_mut().unwrap();
    last.w.fill(0.0);
    last.b[0] = 0.3;
    last.b[1] = -0.2;
    for _ in 0..10 {
        let inp = random_input(&mut rng, &w);
        let d = w.time_derivative(&inp).unwrap();
        assert_eq!(d[0], w.norms.output_scale[0] * 0.3);
        assert_eq!(d[1], w.norms.output_scale[1] * -0.2);
    }
}

#[test]
fn sensitivity_at_zero_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = random_weights(9, MachineModel::TwoAxis, 2, false);
    let mut inp = random_input(&mut rng, &w);
    inp.dt = 0.0;
    let j = w.input_sensitivity(&inp).unwrap();
    let p = 4;
    assert_eq!(j.view((0, 1), (p, p)).into_owned(), DMatrix::identity(p, p));
    assert!(j.view((0, 1 + p), (p, 6)).iter().all(|v| *v == 0.0));
}

#[test]
fn derivatives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = 1e-6;
    let mut checked = 0;
    for case in 0..120u64 {
        let w = random_weights(100 + case, MODELS[case as usize % 2], 1 + case as usize % 2, case % 4 == 0);
        let inp = random_input(&mut rng, &w);
        let ev = w.evaluate(&inp, true).unwrap();
        let jac = ev.jacobian.unwrap();
        for k in 0..inp.raw().len() {
            for i in 0..inp.x0.len() {
                let (fd, fd4) = differences(&|s| w.forward(&perturbed(&inp, k, s)).unwrap()[i], h);
                let an = jac[(i, k)];
                if an.abs() > 1e-8 || fd.abs() > 1e-8 {
                    let scale = an.abs().max(1.0);
                    assert!((fd - an).abs() <= 1e-5 * scale, "case {case} entry ({i},{k}): {an} vs {fd}");
                    assert!((fd4 - an).abs() <= 1e-6 * scale, "case {case} entry ({i},{k}): {an} vs {fd4}");
                    checked += 1;
                }
                if k == 0 {
                    assert!((ev.dx_ddt[i] - an).abs() <= 1e-12 * an.abs().max(1.0));
                }
            }
        }
    }
    assert!(checked > 1000);
}

#[test]
fn loss_examples() {
    let m = machine(MachineModel::Classical);
    let mut w = random_weights(11, MachineModel::Classical, 2, false);
    w.norms.output_scale = vec![1.0, 1.0];
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut inp = random_input(&mut rng, &w);
    let pred = w.forward(&inp).unwrap();
    let mut data = Dataset {
        component: m.clone(),
        r: 2,
        labeled: vec![LabeledPoint { input: inp.clone(), target: pred.clone() }],
        collocation: vec![inp.clone()],
    };
    let v = loss(&w, &data, 0.0).unwrap();
    assert_eq!(v.l_x, 0.0);
    assert_eq!(v.total, v.l_x);
    data.labeled[0].target = vec![pred[0] - 0.1, pred[1]];
    let v = loss(&w, &data, 0.0).unwrap();
    assert!((v.l_x - 0.01).abs() < 1e-15);
    let v2 = loss(&w, &data, 2.0).unwrap();
    assert!(v2.l_c > 0.0);
    assert!((v2.total - (v2.l_x + 2.0 * v2.l_c)).abs() < 1e-15);
    // The physics residual uses the component's own update function.
    inp.dt = 0.1;
    let x = w.forward(&inp).unwrap();
    let f = m.update(&x, input_profile(&inp).unwrap().eval(0.1)).unwrap();
    let d = w.time_derivative(&inp).unwrap();
    data.collocation = vec![inp];
    let expected = (d[0] - f[0]).powi(2) + (d[1] - f[1]).powi(2);
    assert!((loss(&w, &data, 1.0).unwrap().l_c - expected).abs() < 1e-12 * expected.max(1.0));
}

#[test]
fn parameter_gradient_matches_finite_differences() {
    for (seed, model, ctrl) in [(21, MachineModel::Classical, false), (22, MachineModel::TwoAxis, true)] {
        let m = machine(model);
        let w = random_weights(seed, model, 2, ctrl);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labeled = (0..7)
            .map(|_| {
                let input = random_input(&mut rng, &w);
                let target = input.x0.iter().map(|v| v + rng.gen_range(-0.1..0.1)).collect();
                LabeledPoint { input, target }
            })
            .collect();
        let collocation = (0..9).map(|_| random_input(&mut rng, &w)).collect();
        let data = Dataset { component: m, r: 2, labeled, collocation };
        let obj = Objective::new(&w, &data, 0.7, 3).unwrap();
        let theta = w.params();
        let (_, g) = obj.evaluate(&theta, true);
        let g = g.unwrap();
        for k in 0..theta.len() {
            let at = |h: f64| {
                let mut t = theta.clone();
                t[k] += h;
                obj.evaluate(&t, false).0.total
            };
            // Losses here reach 1e5, so a larger step keeps round-off below truncation.
            let (_, c4) = differences(&at, 1e-3);
            assert!((c4 - g[k]).abs() <= 1e-6 * g[k].abs().max(1e-3), "param {k}: {} vs {c4}", g[k]);
        }
    }
}

#[test]
fn gradient_is_independent_of_chunking() {
    let m = machine(MachineModel::Classical);
    let w = random_weights(31, MachineModel::Classical, 2, false);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let labeled = (0..10)
        .map(|_| {
            let input = random_input(&mut rng, &w);
            LabeledPoint { target: input.x0.clone(), input }
        })
        .collect();
    let collocation = (0..10).map(|_| random_input(&mut rng, &w)).collect();
    let data = Dataset { component: m, r: 2, labeled, collocation };
    let theta = w.params();
    let (a, ga) = Objective::new(&w, &data, 1.0, 3).unwrap().evaluate(&theta, true);
    let (b, gb) = Objective::new(&w, &data, 1.0, 256).unwrap().evaluate(&theta, true);
    assert!((a.total - b.total).abs() < 1e-14 * a.total);
    for (x, y) in ga.unwrap().iter().zip(gb.unwrap()) {
        assert!((x - y).abs() < 1e-12 * x.abs().max(1.0));
    }
}

fn small_config() -> TrainingConfig {
    TrainingConfig { n_data: 40, n_collocation: 60, epochs: 3, seed: 5, ..Default::default() }
}

#[test]
fn dataset_shape_and_reproducibility() {
    let m = machine(MachineModel::Classical);
    let cfg = small_config();
    let a = generate_dataset(&m, &cfg).unwrap();
    let b = generate_dataset(&m, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.labeled.len(), 40);
    assert_eq!(a.collocation.len(), 60);
    assert_eq!(a.labeled[0].input.raw().len(), 9);
    let c = generate_dataset(&m, &TrainingConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(a.labeled[0], c.labeled[0]);
}

#[test]
fn paper_sized_dataset_has_nine_inputs() {
    let m = machine(MachineModel::Classical);
    let cfg = TrainingConfig { n_data: 2500, n_collocation: 5000, oracle_dt: 1e-3, ..Default::default() };
    let d = generate_dataset(&m, &cfg).unwrap();
    assert_eq!(d.labeled.len(), 2500);
    assert_eq!(d.collocation.len(), 5000);
    assert!(d.labeled.iter().all(|l| l.input.raw().len() == 9));
}

#[test]
fn zero_step_labels_equal_initial_state() {
    let m = machine(MachineModel::Classical);
    let oracle = default_oracle(1e-4);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = small_config();
    for _ in 0..10 {
        let mut inp = sample_input(&mut rng, &cfg, &m);
        inp.dt = 0.0;
        assert_eq!(oracle(&m, &inp).unwrap(), inp.x0);
    }
}

#[test]
fn labels_are_converged_under_step_halving() {
    let m = machine(MachineModel::Classical);
    let cfg = small_config();
    let data = generate_dataset(&m, &cfg).unwrap();
    let fine = default_oracle(0.5e-4);
    for l in data.labeled.iter().take(10) {
        let y = fine(&m, &l.input).unwrap();
        for (a, b) in y.iter().zip(&l.target) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }
}

#[test]
fn failing_oracle_samples_are_redrawn() {
    let m = machine(MachineModel::Classical);
    let cfg = small_config();
    let base = default_oracle(1e-3);
    // Reject every step longer than 0.1 s.
    let picky = |m: &crate::models::Machine, inp: &PinnInput| {
        if inp.dt > 0.1 {
            Err(crate::Error::Model("rejected".into()))
        } else {
            base(m, inp)
        }
    };
    let d = generate_dataset_with(&m, &cfg, &picky).unwrap();
    assert!(d.labeled.iter().all(|l| l.input.dt <= 0.1));
    let never = |_: &crate::models::Machine, _: &PinnInput| Err(crate::Error::Model("no".into()));
    let err = generate_dataset_with(&m, &TrainingConfig { max_retries: 3, ..cfg }, &never).unwrap_err();
    assert!(matches!(err, crate::Error::Dataset(_)));
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let m = machine(MachineModel::Classical);
    let cfg = TrainingConfig { hidden: vec![8, 8], oracle_dt: 1e-3, ..small_config() };
    let data = generate_dataset(&m, &cfg).unwrap();
    let a = train_on(&m, &cfg, &data).unwrap();
    let b = train_on(&m, &cfg, &data).unwrap();
    assert_eq!(a.weights, b.weights);
    let first = a.history.first().unwrap().loss.total;
    let last = a.history.last().unwrap().loss.total;
    assert!(last < first, "{first} -> {last}");
    let mut csv = Vec::new();
    write_loss_history(&a.history, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.lines().nth(1).unwrap() == "epoch,total,l_x,l_c");
}

#[test]
fn adam_warmup_is_recorded() {
    let m = machine(MachineModel::Classical);
    let cfg = TrainingConfig { hidden: vec![4], adam_steps: 5, epochs: 1, oracle_dt: 1e-3, ..small_config() };
    let out = train(&m, &cfg).unwrap();
    assert!(out.weights.metadata.optimizer.starts_with("adam(5"));
}

#[test]
fn save_load_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let w = random_weights(41, MachineModel::Classical, 2, false);
    let path = dir.path().join("gen2_r2.json");
    save_weights(&w, &path).unwrap();
    let back = load_weights(&path).unwrap();
    assert_eq!(back, w);
    for (a, b) in back.params().iter().zip(w.params()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    let mut m = machine(MachineModel::Classical);
    assert!(back.check_compatible(&m, 2).is_ok());
    assert!(matches!(back.check_compatible(&m, 1), Err(crate::Error::LayoutMismatch(_))));
    m.control.p_m = 0.5;
    assert!(matches!(back.check_compatible(&m, 2), Err(crate::Error::LayoutMismatch(_))));
    assert!(matches!(load_weights(&dir.path().join("missing.json")), Err(crate::Error::NotFound(_))));
    std::fs::write(dir.path().join("bad.json"), "{\"metadata\": 3}").unwrap();
    assert!(matches!(load_weights(&dir.path().join("bad.json")), Err(crate::Error::Malformed { .. })));
}


mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn zero_step_is_identity(seed in 0u64..10_000, two_axis in any::<bool>(), r in 0usize..4, ctl in any::<bool>()) {
            let model = if two_axis { MachineModel::TwoAxis } else { MachineModel::Classical };
            let w = random_weights(seed, model, r, ctl);
            let mut inp = random_input(&mut ChaCha8Rng::seed_from_u64(seed), &w);
            inp.dt = 0.0;
            prop_assert_eq!(w.forward(&inp).unwrap(), inp.x0);
        }

        #[test]
        fn common_angle_shift_shifts_only_the_angle(seed in 0u64..10_000, two_axis in any::<bool>(), shift in -1.0..1.0f64) {
            let model = if two_axis { MachineModel::TwoAxis } else { MachineModel::Classical };
            let w = random_weights(seed, model, 2, false);
            let inp = random_input(&mut ChaCha8Rng::seed_from_u64(seed), &w);
            let mut moved = inp.clone();
            let k = if two_axis { 2 } else { 0 };
            moved.x0[k] += shift;
            moved.xi[1] += shift;
            let (a, b) = (w.forward(&inp).unwrap(), w.forward(&moved).unwrap());
            for i in 0..a.len() {
                let expected = if i == k { a[i] + shift } else { a[i] };
                prop_assert!((b[i] - expected).abs() <= 1e-9, "state {}: {} vs {}", i, b[i], expected);
            }
        }
    }
}
