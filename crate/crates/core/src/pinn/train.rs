//! Network training: optional Adam warm-up followed by L-BFGS.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::{fixed_control, generate_dataset, Dataset, TrainingConfig};
use super::loss::{LossValue, Objective};
use super::network::{init_layers, rate_baseline, Activation, Norms, PinnMetadata, PinnWeights};
use super::optim::{Adam, IterStatus, Lbfgs};
use crate::error::{Error, Result};
use crate::models::Machine;
use crate::trajectory::fmt_f64;

pub const LOSS_HISTORY_SCHEMA: &str = "pinnsim-loss-history/1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub loss: LossValue,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub weights: PinnWeights,
    pub history: Vec<LossRecord>,
}

pub fn write_loss_history<W: Write>(history: &[LossRecord], mut w: W) -> Result<()> {
    writeln!(w, "# schema: {LOSS_HISTORY_SCHEMA}")?;
    writeln!(w, "epoch,total,l_x,l_c")?;
    for r in history {
        writeln!(w, "{},{},{},{}", r.epoch, fmt_f64(r.loss.total), fmt_f64(r.loss.l_x), fmt_f64(r.loss.l_c))?;
    }
    Ok(())
}

/// Feature standardization from the dataset inputs and output scaling from
/// the half-width of the labeled average rates `(target - x0) / dt`, less
/// the rate baseline when enabled.
pub fn build_norms(weights_layout: &super::network::InputLayout, data: &Dataset, dt_max: f64, angle_rate_baseline: bool) -> Norms {
    let d = weights_layout.feature_dim();
    let p = weights_layout.state_dim();
    let mut sum = vec![0.0; d];
    let mut sq = vec![0.0; d];
    let mut f = vec![0.0; d];
    let inputs = data.labeled.iter().map(|l| &l.input).chain(&data.collocation);
    let mut n = 0.0;
    for inp in inputs {
        weights_layout.features(&inp.raw(), &mut f);
        for k in 0..d {
            sum[k] += f[k];
            sq[k] += f[k] * f[k];
        }
        n += 1.0;
    }
    let input_shift: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let input_scale = (0..d)
        .map(|k| {
            let var = (sq[k] / n - input_shift[k] * input_shift[k]).max(0.0);
            if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 }
        })
        .collect();
    let mut lo = vec![f64::INFINITY; p];
    let mut hi = vec![f64::NEG_INFINITY; p];
    for l in &data.labeled {
        if l.input.dt > 1e-3 * dt_max {
            let base = rate_baseline(angle_rate_baseline, weights_layout.omega_s, &l.input.x0);
            for k in 0..p {
                let rate = (l.target[k] - l.input.x0[k]) / l.input.dt - base[k];
                lo[k] = lo[k].min(rate);
                hi[k] = hi[k].max(rate);
            }
        }
    }
    let output_scale = (0..p)
        .map(|k| {
            let hw = 0.5 * (hi[k] - lo[k]);
            if hw.is_finite() && hw > 1e-12 { hw } else { 1.0 }
        })
        .collect();
    Norms { input_shift, input_scale, output_scale }
}

/// Untrained network for `machine` with seeded initialization.
pub fn init_weights(machine: &Machine, cfg: &TrainingConfig, norms: Norms) -> PinnWeights {
    let layout = cfg.layout(machine);
    let mut dims = vec![layout.feature_dim()];
    dims.extend(&cfg.hidden);
    dims.push(layout.state_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX);
    let optimizer = if cfg.adam_steps > 0 {
        format!("adam({}, lr={})+lbfgs(history={})", cfg.adam_steps, cfg.adam_lr, cfg.lbfgs_history)
    } else {
        format!("lbfgs(history={})", cfg.lbfgs_history)
    };
    PinnWeights {
        metadata: PinnMetadata {
            component_id: machine.id.clone(),
            model: machine.model(),
            state_dim: layout.state_dim(),
            r: cfg.r,
            dt_max: cfg.dt_max,
            input_layout: layout.raw_names(),
            feature_layout: layout.feature_names(),
            seed: cfg.seed,
            omega_s: machine.params.omega_s,
            include_control: cfg.include_control,
            control: fixed_control(machine, cfg),
            angle_rate_baseline: cfg.angle_rate_baseline,
            optimizer,
            epochs: cfg.epochs,
            sampling: Some(cfg.ranges.clone()),
        },
        norms,
        layers: init_layers(&dims, &mut rng),
        activation: Activation::Tanh,
    }
}

pub fn train(machine: &Machine, cfg: &TrainingConfig) -> Result<TrainingOutcome> {
    let data = generate_dataset(machine, cfg)?;
    train_on(machine, cfg, &data)
}

pub fn train_on(machine: &Machine, cfg: &TrainingConfig, data: &Dataset) -> Result<TrainingOutcome> {
    train_with_progress(machine, cfg, data, |_| {})
}

/// Trains on `data`, calling `progress` after every epoch.
pub fn train_with_progress<P: FnMut(&LossRecord)>(
    machine: &Machine,
    cfg: &TrainingConfig,
    data: &Dataset,
    mut progress: P,
) -> Result<TrainingOutcome> {
    cfg.validate()?;
    let norms = build_norms(&cfg.layout(machine), data, cfg.dt_max, cfg.angle_rate_baseline);
    let mut weights = init_weights(machine, cfg, norms);
    let obj = Objective::new(&weights, data, cfg.alpha, cfg.chunk_size)?;
    let mut theta = weights.params();
    let mut history = Vec::new();

    let diverged = |epoch: usize, v: &LossValue| -> Result<()> {
        if v.total.is_finite() {
            Ok(())
        } else {
            Err(Error::Divergence { epoch, message: format!("loss became {} (L_x = {}, L_c = {})", v.total, v.l_x, v.l_c) })
        }
    };

    let (v0, _) = obj.evaluate(&theta, false);
    diverged(0, &v0)?;
    history.push(LossRecord { epoch: 0, loss: v0 });
    progress(&history[0]);

    if cfg.adam_steps > 0 {
        let mut adam = Adam::new(theta.len(), cfg.adam_lr);
        for step in 0..cfg.adam_steps {
            let (v, g) = obj.evaluate(&theta, true);
            diverged(0, &v)?;
            adam.step(&mut theta, &g.expect("gradient"));
            if step + 1 == cfg.adam_steps {
                log::debug!("adam warm-up finished at loss {:e}", v.total);
            }
        }
    }

    let mut fg = |x: &[f64]| {
        let (v, g) = obj.evaluate(x, true);
        (v.total, g.expect("gradient"))
    };
    let mut lbfgs = Lbfgs::new(cfg.lbfgs_history);
    let (mut f, mut g) = fg(&theta);
    let mut stalls = 0;
    'epochs: for epoch in 1..=cfg.epochs {
        let mut finished = false;
        for _ in 0..cfg.lbfgs_iters_per_epoch {
            match lbfgs.iterate(&mut fg, &mut theta, &mut f, &mut g) {
                IterStatus::Progress => stalls = 0,
                IterStatus::Stalled => {
                    stalls += 1;
                    if stalls >= 3 {
                        finished = true;
                        break;
                    }
                }
                IterStatus::Converged => {
                    finished = true;
                    break;
                }
            }
        }
        let (v, _) = obj.evaluate(&theta, false);
        diverged(epoch, &v)?;
        history.push(LossRecord { epoch, loss: v });
        progress(history.last().unwrap());
        if finished {
            break 'epochs;
        }
    }
    weights.set_params(&theta);
    Ok(TrainingOutcome { weights, history })
}
