//! Feed-forward network whose output layer preserves the initial state:
//! `x(dt) = x0 + dt * output_scale * (W_K z_K + b_K)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ControlInput, MachineModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
}

/// Ordering of the raw inputs and of the features presented to the first
/// layer.
///
/// Raw inputs are `[dt, x0 (p), V0, theta0, ..., Vr, thetar, u]`. The
/// features drop the absolute angle reference: the rotor angle becomes
/// `wrap(delta - theta0)` and the first angle coefficient becomes the slip
/// `theta1 - omega_s * delta_omega` ("slip"). Both are exact symmetries of the
/// machine equations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputLayout {
    pub model: MachineModel,
    pub r: usize,
    pub include_control: bool,
    pub omega_s: f64,
}

impl InputLayout {
    pub fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        match (self.include_control, self.model) {
            (false, _) => 0,
            (true, MachineModel::Classical) => 1,
            (true, MachineModel::TwoAxis) => 2,
        }
    }

    pub fn xi_dim(&self) -> usize {
        2 * (self.r + 1)
    }

    pub fn raw_dim(&self) -> usize {
        1 + self.state_dim() + self.xi_dim() + self.control_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.raw_dim() - 1
    }

    fn angle_index(&self) -> usize {
        self.state_dim() - 2
    }

    fn speed_index(&self) -> usize {
        self.state_dim() - 1
    }

    fn state_names(&self) -> &'static [&'static str] {
        match self.model {
            MachineModel::Classical => &["delta", "delta_omega"],
            MachineModel::TwoAxis => &["e_q_p", "e_d_p", "delta", "delta_omega"],
        }
    }

    fn control_names(&self) -> &'static [&'static str] {
        match self.control_dim() {
            0 => &[],
            1 => &["p_m"],
            _ => &["p_m", "e_fd"],
        }
    }

    pub fn raw_names(&self) -> Vec<String> {
        let mut names = vec!["dt".to_string()];
        names.extend(self.state_names().iter().map(|s| s.to_string()));
        for k in 0..=self.r {
            names.push(format!("v{k}"));
            names.push(format!("theta{k}"));
        }
        names.extend(self.control_names().iter().map(|s| s.to_string()));
        names
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names = vec!["dt".to_string()];
        for (k, s) in self.state_names().iter().enumerate() {
            names.push(if k == self.angle_index() { "delta_minus_theta0".into() } else { s.to_string() });
        }
        names.push("v0".into());
        for k in 1..=self.r {
            names.push(format!("v{k}"));
            names.push(if k == 1 { "slip".into() } else { format!("theta{k}") });
        }
        names.extend(self.control_names().iter().map(|s| s.to_string()));
        names
    }

    /// Maps raw inputs to features.
    pub fn features(&self, raw: &[f64], out: &mut [f64]) {
        let p = self.state_dim();
        let xi0 = 1 + p;
        out[0] = raw[0];
        out[1..=p].copy_from_slice(&raw[1..=p]);
        out[1 + self.angle_index()] = wrap_angle(raw[1 + self.angle_index()] - raw[xi0 + 1]);
        out[1 + p] = raw[xi0];
        for k in 1..=self.r {
            out[p + 2 * k] = raw[xi0 + 2 * k];
            out[p + 2 * k + 1] = raw[xi0 + 2 * k + 1];
        }
        if self.r >= 1 {
            out[p + 3] -= self.omega_s * raw[1 + self.speed_index()];
        }
        let c0 = xi0 + self.xi_dim();
        out[c0 - 1..].copy_from_slice(&raw[c0..]);
    }

    /// Constant Jacobian of `features` with respect to the raw inputs
    /// (the angle wrap has unit slope everywhere it is differentiable).
    pub fn feature_jacobian(&self) -> DMatrix<f64> {
        let p = self.state_dim();
        let xi0 = 1 + p;
        let mut t = DMatrix::zeros(self.feature_dim(), self.raw_dim());
        t[(0, 0)] = 1.0;
        for k in 0..p {
            t[(1 + k, 1 + k)] = 1.0;
        }
        t[(1 + self.angle_index(), xi0 + 1)] = -1.0;
        t[(1 + p, xi0)] = 1.0;
        for k in 1..=self.r {
            t[(p + 2 * k, xi0 + 2 * k)] = 1.0;
            t[(p + 2 * k + 1, xi0 + 2 * k + 1)] = 1.0;
        }
        if self.r >= 1 {
            t[(p + 3, 1 + self.speed_index())] = -self.omega_s;
        }
        let c0 = xi0 + self.xi_dim();
        for k in 0..self.control_dim() {
            t[(c0 - 1 + k, c0 + k)] = 1.0;
        }
        t
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinnMetadata {
    pub component_id: String,
    pub model: MachineModel,
    pub state_dim: usize,
    pub r: usize,
    pub dt_max: f64,
    pub input_layout: Vec<String>,
    pub feature_layout: Vec<String>,
    pub seed: u64,
    pub omega_s: f64,
    pub include_control: bool,
    /// Control input held fixed during training when it is not a network input.
    pub control: Option<ControlInput>,
    /// The angle rate is `omega_s * delta_omega0` plus the network output
    /// instead of the network output alone.
    #[serde(default)]
    pub angle_rate_baseline: bool,
    #[serde(default)]
    pub optimizer: String,
    #[serde(default)]
    pub epochs: usize,
    /// Box the training inputs were drawn from.
    #[serde(default)]
    pub sampling: Option<super::dataset::SamplingRanges>,
}

impl PinnMetadata {
    pub fn layout(&self) -> InputLayout {
        InputLayout { model: self.model, r: self.r, include_control: self.include_control, omega_s: self.omega_s }
    }

    /// Known part of the average rate over the step, per state.
    pub fn rate_baseline(&self, x0: &[f64]) -> Vec<f64> {
        rate_baseline(self.angle_rate_baseline, self.omega_s, x0)
    }
}

pub(crate) fn rate_baseline(enabled: bool, omega_s: f64, x0: &[f64]) -> Vec<f64> {
    let p = x0.len();
    let mut b = vec![0.0; p];
    if enabled {
        b[p - 2] = omega_s * x0[p - 1];
    }
    b
}

/// Per-feature standardization and per-state output scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub output_scale: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PinnWeights {
    pub metadata: PinnMetadata,
    pub norms: Norms,
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

/// One network query: step length, initial state, local voltage
/// coefficients `(V0, theta0, ..., Vr, thetar)` and, when the network takes
/// it, the control input.
#[derive(Debug, Clone, PartialEq)]
pub struct PinnInput {
    pub dt: f64,
    pub x0: Vec<f64>,
    pub xi: Vec<f64>,
    pub u: Option<Vec<f64>>,
}

impl PinnInput {
    pub fn raw(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(1 + self.x0.len() + self.xi.len() + 2);
        v.push(self.dt);
        v.extend_from_slice(&self.x0);
        v.extend_from_slice(&self.xi);
        if let Some(u) = &self.u {
            v.extend_from_slice(u);
        }
        v
    }
}

/// Network output at one input, optionally with derivatives.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub x: Vec<f64>,
    /// Derivative with respect to the step length.
    pub dx_ddt: Vec<f64>,
    /// Jacobian with respect to the raw inputs (p x raw_dim).
    pub jacobian: Option<DMatrix<f64>>,
}

impl PinnWeights {
    pub fn layout(&self) -> InputLayout {
        self.metadata.layout()
    }

    pub fn state_dim(&self) -> usize {
        self.metadata.state_dim
    }

    /// Structural validation: layer chaining, dimensions, finiteness.
    pub fn validate(&self) -> Result<()> {
        let layout = self.layout();
        if layout.state_dim() != self.metadata.state_dim {
            return Err(Error::LayoutMismatch(format!(
                "state dimension {} does not match model {:?}",
                self.metadata.state_dim, self.metadata.model
            )));
        }
        let d_in = layout.feature_dim();
        if self.norms.input_shift.len() != d_in || self.norms.input_scale.len() != d_in {
            return Err(Error::LayoutMismatch(format!("input normalization does not have {d_in} entries")));
        }
        if self.norms.output_scale.len() != self.metadata.state_dim {
            return Err(Error::LayoutMismatch("output scale does not match the state dimension".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::LayoutMismatch("network has no layers".into()));
        }
        let mut width = d_in;
        for (k, l) in self.layers.iter().enumerate() {
            if l.w.ncols() != width || l.b.len() != l.w.nrows() {
                return Err(Error::LayoutMismatch(format!("layer {k} has incompatible dimensions")));
            }
            width = l.w.nrows();
        }
        if width != self.metadata.state_dim {
            return Err(Error::LayoutMismatch(format!(
                "output width {width} differs from state dimension {}",
                self.metadata.state_dim
            )));
        }
        let finite = self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
            && self.norms.input_shift.iter().chain(&self.norms.input_scale).chain(&self.norms.output_scale).all(|v| v.is_finite());
        if !finite {
            return Err(Error::LayoutMismatch("non-finite network parameter".into()));
        }
        if self.norms.input_scale.iter().any(|&s| s == 0.0) {
            return Err(Error::LayoutMismatch("zero input scale".into()));
        }
        Ok(())
    }

    fn check_input(&self, inp: &PinnInput) -> Result<()> {
        let layout = self.layout();
        if inp.x0.len() != layout.state_dim() {
            return Err(Error::Dimension { context: "network initial state", expected: layout.state_dim(), actual: inp.x0.len() });
        }
        if inp.xi.len() != layout.xi_dim() {
            return Err(Error::Dimension { context: "network voltage coefficients", expected: layout.xi_dim(), actual: inp.xi.len() });
        }
        let nu = inp.u.as_ref().map_or(0, |u| u.len());
        if nu != layout.control_dim() {
            return Err(Error::Dimension { context: "network control input", expected: layout.control_dim(), actual: nu });
        }
        Ok(())
    }

    fn standardized(&self, raw: &[f64]) -> DVector<f64> {
        let layout = self.layout();
        let mut f = vec![0.0; layout.feature_dim()];
        layout.features(raw, &mut f);
        DVector::from_iterator(
            f.len(),
            f.iter().zip(&self.norms.input_shift).zip(&self.norms.input_scale).map(|((v, m), s)| (v - m) / s),
        )
    }

    /// Hidden activations `z_1..z_K` and the raw head output.
    fn propagate(&self, z0: &DVector<f64>) -> (Vec<DVector<f64>>, DVector<f64>) {
        let (head, hidden) = self.layers.split_last().expect("validated network");
        let mut zs = Vec::with_capacity(hidden.len());
        let mut z = z0.clone();
        for l in hidden {
            z = (&l.w * &z + &l.b).map(f64::tanh);
            zs.push(z.clone());
        }
        let out = &head.w * &z + &head.b;
        (zs, out)
    }

    pub fn evaluate(&self, inp: &PinnInput, with_jacobian: bool) -> Result<Evaluation> {
        self.check_input(inp)?;
        let raw = inp.raw();
        let z0 = self.standardized(&raw);
        let (zs, out) = self.propagate(&z0);
        let scale = &self.norms.output_scale;
        let p = self.state_dim();
        let base = self.metadata.rate_baseline(&inp.x0);
        let x: Vec<f64> = (0..p).map(|k| inp.x0[k] + inp.dt * (base[k] + scale[k] * out[k])).collect();

        // Derivatives of the head output with respect to the standardized features.
        let jo = if with_jacobian {
            let mut m = self.layers[0].w.clone();
            for (k, z) in zs.iter().enumerate() {
                for (mut row, zi) in m.row_iter_mut().zip(z.iter()) {
                    row *= 1.0 - zi * zi;
                }
                m = &self.layers[k + 1].w * m;
            }
            Some(m)
        } else {
            None
        };
        let d_out_ddt: DVector<f64> = match &jo {
            Some(m) => m.column(0) / self.norms.input_scale[0],
            None => {
                let mut t = self.layers[0].w.column(0) / self.norms.input_scale[0];
                for (k, z) in zs.iter().enumerate() {
                    t.zip_apply(z, |ti, zi| *ti *= 1.0 - zi * zi);
                    t = &self.layers[k + 1].w * t;
                }
                t
            }
        };
        let dx_ddt = (0..p).map(|k| base[k] + scale[k] * (out[k] + inp.dt * d_out_ddt[k])).collect();

        let jacobian = jo.map(|m| {
            let layout = self.layout();
            let mut jf = m;
            for (j, s) in self.norms.input_scale.iter().enumerate() {
                jf.column_mut(j).scale_mut(1.0 / s);
            }
            let mut jac = jf * layout.feature_jacobian();
            for k in 0..p {
                jac.row_mut(k).scale_mut(inp.dt * scale[k]);
                jac[(k, 0)] += base[k] + scale[k] * out[k];
                jac[(k, 1 + k)] += 1.0;
            }
            if self.metadata.angle_rate_baseline {
                jac[(p - 2, p)] += inp.dt * self.metadata.omega_s;
            }
            jac
        });
        Ok(Evaluation { x, dx_ddt, jacobian })
    }

    pub fn forward(&self, inp: &PinnInput) -> Result<Vec<f64>> {
        Ok(self.evaluate(inp, false)?.x)
    }

    pub fn time_derivative(&self, inp: &PinnInput) -> Result<Vec<f64>> {
        Ok(self.evaluate(inp, false)?.dx_ddt)
    }

    pub fn input_sensitivity(&self, inp: &PinnInput) -> Result<DMatrix<f64>> {
        Ok(self.evaluate(inp, true)?.jacobian.expect("requested"))
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Flattens all weights (column-major) and biases layer by layer.
    pub fn params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            v.extend_from_slice(l.w.as_slice());
            v.extend_from_slice(l.b.as_slice());
        }
        v
    }

    pub fn set_params(&mut self, theta: &[f64]) {
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.as_mut_slice().copy_from_slice(&theta[off..off + nw]);
            off += nw;
            let nb = l.b.len();
            l.b.as_mut_slice().copy_from_slice(&theta[off..off + nb]);
            off += nb;
        }
    }
}

/// Batch quantities needed to backpropagate through the head output and its
/// derivative with respect to the step length.
pub(crate) struct BatchPass {
    /// `z_0..z_K`, each width x batch.
    zs: Vec<DMatrix<f64>>,
    /// Tangents of `z_0..z_K` in the step-length direction (present when requested).
    dzs: Option<Vec<DMatrix<f64>>>,
    /// Tangents of the hidden pre-activations.
    das: Vec<DMatrix<f64>>,
    pub out: DMatrix<f64>,
    pub d_out: Option<DMatrix<f64>>,
}

fn add_bias(m: &mut DMatrix<f64>, b: &DVector<f64>) {
    for mut col in m.column_iter_mut() {
        col += b;
    }
}

/// Forward pass on standardized features `z0` (d_in x batch).
pub(crate) fn batch_forward(layers: &[Layer], dt_scale: f64, z0: DMatrix<f64>, tangent: bool) -> BatchPass {
    let n = z0.ncols();
    let (head, hidden) = layers.split_last().expect("non-empty network");
    let mut dzs = tangent.then(|| {
        let mut d = DMatrix::zeros(z0.nrows(), n);
        d.row_mut(0).fill(1.0 / dt_scale);
        vec![d]
    });
    let mut zs = vec![z0];
    let mut das = Vec::new();
    for l in hidden {
        let mut a = &l.w * zs.last().unwrap();
        add_bias(&mut a, &l.b);
        let z = a.map(f64::tanh);
        if let Some(d) = dzs.as_mut() {
            let da = &l.w * d.last().unwrap();
            let mut dz = da.clone();
            dz.zip_apply(&z, |v, zi| *v *= 1.0 - zi * zi);
            das.push(da);
            d.push(dz);
        }
        zs.push(z);
    }
    let mut out = &head.w * zs.last().unwrap();
    add_bias(&mut out, &head.b);
    let d_out = dzs.as_ref().map(|d| &head.w * d.last().unwrap());
    BatchPass { zs, dzs, das, out, d_out }
}

/// Accumulates into `grad` (flattened like `PinnWeights::params`) the
/// gradient of a loss whose sensitivities to the head output and to its
/// step-length derivative are `g_out` and `g_dout`.
pub(crate) fn batch_backward(
    layers: &[Layer],
    pass: &BatchPass,
    g_out: &DMatrix<f64>,
    g_dout: Option<&DMatrix<f64>>,
    grad: &mut [f64],
) {
    let k_last = layers.len() - 1;
    let offsets: Vec<usize> = layers
        .iter()
        .scan(0, |off, l| {
            let o = *off;
            *off += l.w.len() + l.b.len();
            Some(o)
        })
        .collect();
    let accumulate = |grad: &mut [f64], k: usize, gw: &DMatrix<f64>, gb: &DVector<f64>| {
        let off = offsets[k];
        let nw = gw.len();
        for (g, v) in grad[off..off + nw].iter_mut().zip(gw.as_slice()) {
            *g += v;
        }
        for (g, v) in grad[off + nw..off + nw + gb.len()].iter_mut().zip(gb.as_slice()) {
            *g += v;
        }
    };

    let mut g_a = g_out.clone();
    let mut g_da = g_dout.cloned();
    for k in (0..=k_last).rev() {
        let l = &layers[k];
        let z_in = &pass.zs[k];
        let mut gw = &g_a * z_in.transpose();
        if let (Some(gd), Some(dz)) = (&g_da, &pass.dzs) {
            gw += gd * dz[k].transpose();
        }
        let gb = g_a.column_sum();
        accumulate(grad, k, &gw, &gb);
        if k == 0 {
            break;
        }
        // Back through z_k = tanh(a_{k-1}) and dz_k = (1 - z_k^2) da_{k-1}.
        let z = &pass.zs[k];
        let mut g_z = l.w.transpose() * &g_a;
        let g_dz = g_da.as_ref().map(|gd| l.w.transpose() * gd);
        if let Some(gdz) = &g_dz {
            // dz_k = (1 - z_k^2) da_{k-1} also depends on z_k.
            let da = &pass.das[k - 1];
            for ((gz, &zi), (&gdzi, &dai)) in g_z.iter_mut().zip(z.iter()).zip(gdz.iter().zip(da.iter())) {
                *gz -= 2.0 * zi * dai * gdzi;
            }
        }
        g_z.zip_apply(z, |g, zi| *g *= 1.0 - zi * zi);
        g_da = g_dz.map(|mut gdz| {
            gdz.zip_apply(z, |g, zi| *g *= 1.0 - zi * zi);
            gdz
        });
        g_a = g_z;
    }
}

/// Fan-in scaled uniform initialization.
pub fn init_layers<R: rand::Rng>(dims: &[usize], rng: &mut R) -> Vec<Layer> {
    dims.windows(2)
        .map(|w| {
            let bound = 1.0 / (w[0] as f64).sqrt();
            Layer {
                w: DMatrix::from_fn(w[1], w[0], |_, _| rng.gen_range(-bound..bound)),
                b: DVector::from_fn(w[1], |_, _| rng.gen_range(-bound..bound)),
            }
        })
        .collect()
}
