use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::network::{init_layers, Activation, InputLayout, Norms, PinnMetadata, PinnWeights};
use super::{PinnInput, TrainingConfig};
use crate::models::{ControlInput, Machine, MachineModel, MachineParams, OMEGA_S_60HZ};

pub fn machine(model: MachineModel) -> Machine {
    let params = match model {
        MachineModel::Classical => MachineParams::classical(6.4, 1.28, 0.1969, 0.0, OMEGA_S_60HZ),
        MachineModel::TwoAxis => MachineParams {
            h: 6.4,
            d: 1.28,
            x_d: 0.8958,
            x_d_p: 0.1198,
            x_q: 0.8645,
            x_q_p: 0.1969,
            t_do_p: 6.0,
            t_qo_p: 0.535,
            r_s: 0.0,
            omega_s: OMEGA_S_60HZ,
            model: MachineModel::TwoAxis,
        },
    };
    Machine {
        id: "gen2".into(),
        bus: 0,
        params,
        control: ControlInput { p_m: 1.63, e_fd: 1.8 },
        e_q0: 1.1,
        e_d0: 0.0,
    }
}

/// Random network with random (non-trivial) normalization.
pub fn random_weights(seed: u64, model: MachineModel, r: usize, include_control: bool) -> PinnWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = InputLayout { model, r, include_control, omega_s: OMEGA_S_60HZ };
    let d = layout.feature_dim();
    let p = layout.state_dim();
    let hidden = [rng.gen_range(3..9), rng.gen_range(3..9)];
    let mut layers = init_layers(&[d, hidden[0], hidden[1], p], &mut rng);
    for l in &mut layers {
        l.w *= 1.5;
    }
    let last = layers.last_mut().unwrap();
    last.b = DVector::from_fn(p, |_, _| rng.gen_range(-1.0..1.0));
    PinnWeights {
        metadata: PinnMetadata {
            component_id: "gen2".into(),
            model,
            state_dim: p,
            r,
            dt_max: 0.3,
            input_layout: layout.raw_names(),
            feature_layout: layout.feature_names(),
            seed,
            omega_s: OMEGA_S_60HZ,
            include_control,
            control: (!include_control).then_some(ControlInput { p_m: 1.63, e_fd: 1.8 }),
            angle_rate_baseline: seed % 4 == 1,
            optimizer: String::new(),
            epochs: 0,
            sampling: None,
        },
        norms: Norms {
            input_shift: (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            input_scale: (0..d).map(|_| rng.gen_range(0.2..2.0)).collect(),
            output_scale: (0..p).map(|_| rng.gen_range(0.1..3.0)).collect(),
        },
        layers,
        activation: Activation::Tanh,
    }
}

pub fn random_input(rng: &mut ChaCha8Rng, w: &PinnWeights) -> PinnInput {
    let layout = w.layout();
    let mut cfg = TrainingConfig { r: layout.r, include_control: layout.include_control, ..Default::default() };
    cfg.ranges.v_higher.resize(layout.r.max(2), [-0.25, 0.25]);
    cfg.ranges.theta_higher.resize(layout.r.max(2), [-2.0, 2.0]);
    super::sample_input(rng, &cfg, &machine(layout.model))
}

/// Straight-line reimplementation of the forward pass with explicit loops.
pub fn reference_forward(w: &PinnWeights, inp: &PinnInput) -> Vec<f64> {
    let raw = inp.raw();
    let layout = w.layout();
    let p = layout.state_dim();
    // Features written out by hand.
    let mut f = Vec::new();
    f.push(raw[0]);
    let angle = p - 2;
    for k in 0..p {
        if k == angle {
            let d = raw[1 + k] - raw[1 + p + 1];
            f.push(d - 2.0 * std::f64::consts::PI * ((d + std::f64::consts::PI) / (2.0 * std::f64::consts::PI)).floor());
        } else {
            f.push(raw[1 + k]);
        }
    }
    f.push(raw[1 + p]);
    for k in 1..=layout.r {
        f.push(raw[1 + p + 2 * k]);
        let th = raw[1 + p + 2 * k + 1];
        f.push(if k == 1 { th - OMEGA_S_60HZ * raw[p] } else { th });
    }
    f.extend_from_slice(&raw[1 + p + 2 * (layout.r + 1)..]);
    let mut z: Vec<f64> = f.iter().enumerate().map(|(k, v)| (v - w.norms.input_shift[k]) / w.norms.input_scale[k]).collect();
    let n = w.layers.len();
    for (li, l) in w.layers.iter().enumerate() {
        let mut next = vec![0.0; l.w.nrows()];
        for i in 0..l.w.nrows() {
            let mut acc = l.b[i];
            for j in 0..l.w.ncols() {
                acc += l.w[(i, j)] * z[j];
            }
            next[i] = if li + 1 < n { acc.tanh() } else { acc };
        }
        z = next;
    }
    (0..p)
        .map(|k| {
            let base = if w.metadata.angle_rate_baseline && k == p - 2 { OMEGA_S_60HZ * inp.x0[p - 1] } else { 0.0 };
            inp.x0[k] + inp.dt * (base + w.norms.output_scale[k] * z[k])
        })
        .collect()
}

pub fn zero_head(w: &mut PinnWeights) {
    let last = w.layers.last_mut().unwrap();
    last.w = DMatrix::zeros(last.w.nrows(), last.w.ncols());
    last.b = DVector::zeros(last.b.len());
}
