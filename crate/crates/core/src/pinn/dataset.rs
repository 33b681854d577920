//! Training configuration and oracle-labeled datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{InputLayout, PinnInput};
use crate::baselines::{single_component_solve, SINGLE_COMPONENT_DT};
use crate::error::{Error, Result};
use crate::models::{ControlInput, DynamicComponent, Machine, MachineModel};
use crate::voltage::VoltageProfile;

/// Sampling box for network inputs. The rotor angle is sampled relative to
/// the local voltage angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingRanges {
    pub theta0: [f64; 2],
    /// `delta - theta0`.
    pub rel_angle: [f64; 2],
    pub delta_omega: [f64; 2],
    pub e_q_p: [f64; 2],
    pub e_d_p: [f64; 2],
    pub v0: [f64; 2],
    /// Ranges of `V_1, V_2, ...`.
    pub v_higher: Vec<[f64; 2]>,
    /// Ranges of `theta_1, theta_2, ...`.
    pub theta_higher: Vec<[f64; 2]>,
    /// Sample `theta1 - omega_s * delta_omega` from the `theta_1` range
    /// instead of `theta1` itself.
    pub theta1_relative: bool,
    pub p_m: [f64; 2],
    pub e_fd: [f64; 2],
}

impl Default for SamplingRanges {
    fn default() -> Self {
        use std::f64::consts::{FRAC_PI_2, PI};
        Self {
            theta0: [-PI, PI],
            rel_angle: [-FRAC_PI_2, FRAC_PI_2],
            delta_omega: [-0.01, 0.01],
            e_q_p: [0.6, 1.4],
            e_d_p: [-0.6, 0.6],
            v0: [0.85, 1.15],
            v_higher: vec![[-0.25, 0.25], [-0.5, 0.5]],
            theta_higher: vec![[-2.0, 2.0], [-4.0, 4.0]],
            theta1_relative: false,
            p_m: [0.0, 2.0],
            e_fd: [1.0, 2.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub n_data: usize,
    pub n_collocation: usize,
    pub alpha: f64,
    /// L-BFGS epochs; each runs up to `lbfgs_iters_per_epoch` iterations.
    pub epochs: usize,
    pub lbfgs_iters_per_epoch: usize,
    pub lbfgs_history: usize,
    /// First-order warm-up steps before L-BFGS (0 disables).
    pub adam_steps: usize,
    pub adam_lr: f64,
    pub seed: u64,
    pub dt_max: f64,
    pub r: usize,
    pub hidden: Vec<usize>,
    pub include_control: bool,
    /// Add the kinematic angle rate `omega_s * delta_omega0` outside the network.
    pub angle_rate_baseline: bool,
    pub ranges: SamplingRanges,
    /// Step of the labeling oracle.
    pub oracle_dt: f64,
    pub max_retries: usize,
    /// Points per deterministic reduction chunk.
    pub chunk_size: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            n_data: 2500,
            n_collocation: 5000,
            alpha: 1.0,
            epochs: 2000,
            lbfgs_iters_per_epoch: 20,
            lbfgs_history: 20,
            adam_steps: 0,
            adam_lr: 1e-3,
            seed: 0,
            dt_max: 0.3,
            r: 2,
            hidden: vec![32, 32],
            include_control: false,
            angle_rate_baseline: false,
            ranges: SamplingRanges::default(),
            oracle_dt: SINGLE_COMPONENT_DT,
            max_retries: 100,
            chunk_size: 256,
        }
    }
}

impl SamplingRanges {
    /// Names the first input quantity outside the box, if any. Only the
    /// state and voltage coefficients are checked; `dt` and controls are not.
    pub fn violation(&self, inp: &PinnInput, omega_s: f64) -> Option<String> {
        let inside = |v: f64, r: [f64; 2]| v >= r[0] && v <= r[1];
        let p = inp.x0.len();
        let (delta, dw) = (inp.x0[p - 2], inp.x0[p - 1]);
        let theta0 = inp.xi[1];
        let mut checks = vec![
            ("rel_angle", super::network::wrap_angle(delta - theta0), self.rel_angle),
            ("delta_omega", dw, self.delta_omega),
            ("v0", inp.xi[0], self.v0),
        ];
        if p == 4 {
            checks.push(("e_q_p", inp.x0[0], self.e_q_p));
            checks.push(("e_d_p", inp.x0[1], self.e_d_p));
        }
        let r = inp.xi.len() / 2 - 1;
        for k in 0..r {
            let (v, mut th) = (inp.xi[2 * k + 2], inp.xi[2 * k + 3]);
            if k == 0 && self.theta1_relative {
                th -= omega_s * dw;
            }
            if let Some(rg) = self.v_higher.get(k) {
                checks.push(("v_higher", v, *rg));
            }
            if let Some(rg) = self.theta_higher.get(k) {
                checks.push(("theta_higher", th, *rg));
            }
        }
        checks
            .into_iter()
            .find(|(_, v, r)| !inside(*v, *r))
            .map(|(name, v, r)| format!("{name} = {v} outside [{}, {}]", r[0], r[1]))
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
        return Err(Error::InvalidParameter(format!("invalid sampling range for {name}: {r:?}")));
    }
    Ok(())
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_data == 0 || self.n_collocation == 0 {
            return Err(Error::InvalidParameter("dataset and collocation sizes must be positive".into()));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::InvalidParameter(format!("loss weight must be non-negative, got {}", self.alpha)));
        }
        if !(self.dt_max > 0.0) || !(self.oracle_dt > 0.0) {
            return Err(Error::InvalidParameter("dt_max and oracle_dt must be positive".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidParameter("hidden layer widths must be positive".into()));
        }
        if self.chunk_size == 0 || self.lbfgs_history == 0 {
            return Err(Error::InvalidParameter("chunk size and L-BFGS history must be positive".into()));
        }
        let rg = &self.ranges;
        for (name, r) in [
            ("theta0", rg.theta0),
            ("rel_angle", rg.rel_angle),
            ("delta_omega", rg.delta_omega),
            ("e_q_p", rg.e_q_p),
            ("e_d_p", rg.e_d_p),
            ("v0", rg.v0),
            ("p_m", rg.p_m),
            ("e_fd", rg.e_fd),
        ] {
            check_range(name, r)?;
        }
        if rg.v_higher.len() < self.r || rg.theta_higher.len() < self.r {
            return Err(Error::InvalidParameter(format!("sampling ranges cover fewer than r = {} coefficients", self.r)));
        }
        for r in rg.v_higher.iter().chain(&rg.theta_higher) {
            check_range("coefficient", *r)?;
        }
        if rg.v0[0] <= 0.0 {
            return Err(Error::InvalidParameter("voltage magnitude range must be positive".into()));
        }
        Ok(())
    }

    pub fn layout(&self, machine: &Machine) -> InputLayout {
        InputLayout {
            model: machine.model(),
            r: self.r,
            include_control: self.include_control,
            omega_s: machine.params.omega_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoint {
    pub input: PinnInput,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Component the data was generated for, carrying the fixed control input.
    pub component: Machine,
    pub r: usize,
    pub labeled: Vec<LabeledPoint>,
    /// Unlabeled points; the physics residual is evaluated at `t0 + dt`.
    pub collocation: Vec<PinnInput>,
}

impl Dataset {
    /// Component with the control input of `inp` applied.
    pub fn component_for(&self, inp: &PinnInput) -> Machine {
        with_control(&self.component, inp.u.as_deref())
    }
}

pub(crate) fn with_control(machine: &Machine, u: Option<&[f64]>) -> Machine {
    let mut m = machine.clone();
    if let Some(u) = u {
        m.control.p_m = u[0];
        if let Some(&e) = u.get(1) {
            m.control.e_fd = e;
        }
    }
    m
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..=r[1])
    }
}

/// Draws one network input from the sampling box.
pub fn sample_input(rng: &mut ChaCha8Rng, cfg: &TrainingConfig, machine: &Machine) -> PinnInput {
    let rg = &cfg.ranges;
    let dt = rng.gen_range(0.0..=cfg.dt_max);
    let theta0 = uniform(rng, rg.theta0);
    let delta = theta0 + uniform(rng, rg.rel_angle);
    let dw = uniform(rng, rg.delta_omega);
    let x0 = match machine.model() {
        MachineModel::Classical => vec![delta, dw],
        MachineModel::TwoAxis => vec![uniform(rng, rg.e_q_p), uniform(rng, rg.e_d_p), delta, dw],
    };
    let mut xi = vec![uniform(rng, rg.v0), theta0];
    for k in 0..cfg.r {
        xi.push(uniform(rng, rg.v_higher[k]));
        let mut th = uniform(rng, rg.theta_higher[k]);
        if k == 0 && rg.theta1_relative {
            th += machine.params.omega_s * dw;
        }
        xi.push(th);
    }
    let u = cfg.include_control.then(|| match machine.model() {
        MachineModel::Classical => vec![uniform(rng, rg.p_m)],
        MachineModel::TwoAxis => vec![uniform(rng, rg.p_m), uniform(rng, rg.e_fd)],
    });
    PinnInput { dt, x0, xi, u }
}

/// Local profile of a network input, anchored at `t0 = 0`.
pub fn input_profile(inp: &PinnInput) -> Result<VoltageProfile> {
    VoltageProfile::from_coefficients(0.0, &inp.xi)
}

fn profile_ok(p: &VoltageProfile, dt: f64) -> bool {
    let times: Vec<f64> = (0..=16).map(|k| dt * k as f64 / 16.0).collect();
    p.check_positive(&times).is_ok()
}

/// Label oracle: terminal state of `machine` from the input's initial state
/// under the input's voltage profile.
pub type Oracle<'a> = dyn Fn(&Machine, &PinnInput) -> Result<Vec<f64>> + Sync + 'a;

pub fn default_oracle(h: f64) -> impl Fn(&Machine, &PinnInput) -> Result<Vec<f64>> + Sync {
    move |m: &Machine, inp: &PinnInput| {
        let prof = input_profile(inp)?;
        single_component_solve(m as &dyn DynamicComponent, &inp.x0, &prof, inp.dt, h)
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn generate_dataset(machine: &Machine, cfg: &TrainingConfig) -> Result<Dataset> {
    generate_dataset_with(machine, cfg, &default_oracle(cfg.oracle_dt))
}

/// Builds a dataset with an explicit oracle. Every point draws from its own
/// random stream, so the result does not depend on thread scheduling.
pub fn generate_dataset_with(machine: &Machine, cfg: &TrainingConfig, oracle: &Oracle) -> Result<Dataset> {
    cfg.validate()?;
    let labeled = (0..cfg.n_data)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(cfg.seed, 2 * i as u64);
            for _ in 0..=cfg.max_retries {
                let input = sample_input(&mut rng, cfg, machine);
                let ok = input_profile(&input).map(|p| profile_ok(&p, input.dt)).unwrap_or(false);
                if !ok {
                    continue;
                }
                let m = with_control(machine, input.u.as_deref());
                if let Ok(target) = oracle(&m, &input) {
                    if target.iter().all(|v| v.is_finite()) {
                        return Ok(LabeledPoint { input, target });
                    }
                }
            }
            Err(Error::Dataset(format!("no valid sample for point {i} after {} attempts", cfg.max_retries + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    let collocation = (0..cfg.n_collocation)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(cfg.seed, 2 * i as u64 + 1);
            for _ in 0..=cfg.max_retries {
                let input = sample_input(&mut rng, cfg, machine);
                if input_profile(&input).map(|p| profile_ok(&p, input.dt)).unwrap_or(false) {
                    return Ok(input);
                }
            }
            Err(Error::Dataset(format!("no valid collocation point {i}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { component: machine.clone(), r: cfg.r, labeled, collocation })
}

/// Control input recorded with a network trained at fixed control.
pub(crate) fn fixed_control(machine: &Machine, cfg: &TrainingConfig) -> Option<ControlInput> {
    (!cfg.include_control).then_some(machine.control)
}
