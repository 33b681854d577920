//! Data and physics losses with exact parameter gradients.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use super::dataset::{input_profile, with_control, Dataset};
use super::network::{batch_backward, batch_forward, PinnWeights};
use crate::error::Result;
use crate::models::{DynamicComponent, Machine};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub l_x: f64,
    pub l_c: f64,
}

/// Losses in output-scaled units: state errors are divided by the network's
/// output scale before squaring.
pub fn loss(w: &PinnWeights, data: &Dataset, alpha: f64) -> Result<LossValue> {
    let obj = Objective::new(w, data, alpha, 256)?;
    Ok(obj.evaluate(&w.params(), false).0)
}

struct LabeledChunk {
    z0: DMatrix<f64>,
    dt: Vec<f64>,
    x0: DMatrix<f64>,
    base: DMatrix<f64>,
    target: DMatrix<f64>,
}

struct CollocationChunk {
    z0: DMatrix<f64>,
    dt: Vec<f64>,
    x0: Vec<Vec<f64>>,
    base: Vec<Vec<f64>>,
    v: Vec<Complex64>,
    machines: Vec<Option<Machine>>,
}

/// Loss over a fixed dataset as a function of the flattened parameters.
pub(crate) struct Objective {
    template: PinnWeights,
    component: Machine,
    labeled: Vec<LabeledChunk>,
    collocation: Vec<CollocationChunk>,
    n_labeled: usize,
    n_collocation: usize,
    alpha: f64,
}

fn standardize(w: &PinnWeights, raws: &[Vec<f64>]) -> DMatrix<f64> {
    let layout = w.layout();
    let d = layout.feature_dim();
    let mut m = DMatrix::zeros(d, raws.len());
    let mut f = vec![0.0; d];
    for (j, raw) in raws.iter().enumerate() {
        layout.features(raw, &mut f);
        for k in 0..d {
            m[(k, j)] = (f[k] - w.norms.input_shift[k]) / w.norms.input_scale[k];
        }
    }
    m
}

impl Objective {
    pub(crate) fn new(w: &PinnWeights, data: &Dataset, alpha: f64, chunk: usize) -> Result<Self> {
        let p = w.state_dim();
        let mut labeled = Vec::new();
        for pts in data.labeled.chunks(chunk) {
            let raws: Vec<Vec<f64>> = pts.iter().map(|pt| pt.input.raw()).collect();
            labeled.push(LabeledChunk {
                z0: standardize(w, &raws),
                dt: pts.iter().map(|pt| pt.input.dt).collect(),
                x0: DMatrix::from_fn(p, pts.len(), |k, j| pts[j].input.x0[k]),
                base: DMatrix::from_fn(p, pts.len(), |k, j| w.metadata.rate_baseline(&pts[j].input.x0)[k]),
                target: DMatrix::from_fn(p, pts.len(), |k, j| pts[j].target[k]),
            });
        }
        let mut collocation = Vec::new();
        for pts in data.collocation.chunks(chunk) {
            let raws: Vec<Vec<f64>> = pts.iter().map(|inp| inp.raw()).collect();
            let v = pts
                .iter()
                .map(|inp| Ok(input_profile(inp)?.eval(inp.dt)))
                .collect::<Result<Vec<_>>>()?;
            collocation.push(CollocationChunk {
                z0: standardize(w, &raws),
                dt: pts.iter().map(|inp| inp.dt).collect(),
                x0: pts.iter().map(|inp| inp.x0.clone()).collect(),
                base: pts.iter().map(|inp| w.metadata.rate_baseline(&inp.x0)).collect(),
                v,
                machines: pts.iter().map(|inp| inp.u.as_deref().map(|u| with_control(&data.component, Some(u)))).collect(),
            });
        }
        Ok(Self {
            template: w.clone(),
            component: data.component.clone(),
            labeled,
            collocation,
            n_labeled: data.labeled.len(),
            n_collocation: data.collocation.len(),
            alpha,
        })
    }

    /// Loss and, when requested, its gradient. Chunks are reduced in a fixed
    /// order so the result is independent of the thread count.
    pub(crate) fn evaluate(&self, theta: &[f64], with_grad: bool) -> (LossValue, Option<Vec<f64>>) {
        let mut w = self.template.clone();
        w.set_params(theta);
        let np = theta.len();
        let dt_scale = w.norms.input_scale[0];
        let scale = &w.norms.output_scale;
        let p = w.state_dim();

        let lab: Vec<(f64, Vec<f64>)> = self
            .labeled
            .par_iter()
            .map(|c| {
                let pass = batch_forward(&w.layers, dt_scale, c.z0.clone(), false);
                // Same expression as the forward pass, so exact labels give zero error.
                let mut err = DMatrix::zeros(p, c.dt.len());
                for (j, &dt) in c.dt.iter().enumerate() {
                    for k in 0..p {
                        let x = c.x0[(k, j)] + dt * (c.base[(k, j)] + scale[k] * pass.out[(k, j)]);
                        err[(k, j)] = (x - c.target[(k, j)]) / scale[k];
                    }
                }
                let sq = err.norm_squared();
                let mut grad = Vec::new();
                if with_grad {
                    grad = vec![0.0; np];
                    let mut g_out = err;
                    let f = 2.0 / self.n_labeled as f64;
                    for (j, &dt) in c.dt.iter().enumerate() {
                        g_out.column_mut(j).scale_mut(f * dt);
                    }
                    batch_backward(&w.layers, &pass, &g_out, None, &mut grad);
                }
                (sq, grad)
            })
            .collect();

        let col: Vec<(f64, Vec<f64>)> = if self.alpha > 0.0 || !with_grad {
            self.collocation
                .par_iter()
                .map(|c| {
                    let pass = batch_forward(&w.layers, dt_scale, c.z0.clone(), true);
                    let d_out = pass.d_out.as_ref().expect("tangent requested");
                    let m = c.dt.len();
                    let mut res = DMatrix::zeros(p, m);
                    let mut g_out = DMatrix::zeros(p, m);
                    let mut g_dout = DMatrix::zeros(p, m);
                    let f = 2.0 * self.alpha / self.n_collocation as f64;
                    for j in 0..m {
                        let dt = c.dt[j];
                        let x: Vec<f64> = (0..p).map(|k| c.x0[j][k] + dt * (c.base[j][k] + scale[k] * pass.out[(k, j)])).collect();
                        let machine = c.machines[j].as_ref().unwrap_or(&self.component);
                        let (fx, jac) = match (machine.update(&x, c.v[j]), with_grad.then(|| machine.partials(&x, c.v[j]))) {
                            (Ok(fx), Some(Ok(parts))) => (fx, Some(parts.df_dx)),
                            (Ok(fx), None) => (fx, None),
                            _ => (vec![f64::NAN; p], None),
                        };
                        for k in 0..p {
                            res[(k, j)] = pass.out[(k, j)] + dt * d_out[(k, j)] - (fx[k] - c.base[j][k]) / scale[k];
                        }
                        if let Some(jf) = jac {
                            for i in 0..p {
                                let mut g = res[(i, j)];
                                for k in 0..p {
                                    g -= res[(k, j)] * dt * scale[i] * jf[(k, i)] / scale[k];
                                }
                                g_out[(i, j)] = f * g;
                                g_dout[(i, j)] = f * dt * res[(i, j)];
                            }
                        }
                    }
                    let sq = res.norm_squared();
                    let mut grad = Vec::new();
                    if with_grad {
                        grad = vec![0.0; np];
                        batch_backward(&w.layers, &pass, &g_out, Some(&g_dout), &mut grad);
                    }
                    (sq, grad)
                })
                .collect()
        } else {
            Vec::new()
        };

        let l_x = lab.iter().map(|(s, _)| s).sum::<f64>() / self.n_labeled.max(1) as f64;
        let l_c = if col.is_empty() { 0.0 } else { col.iter().map(|(s, _)| s).sum::<f64>() / self.n_collocation as f64 };
        let total = l_x + self.alpha * l_c;
        let grad = with_grad.then(|| {
            let mut g = vec![0.0; np];
            for (_, gc) in lab.iter().chain(&col) {
                for (a, b) in g.iter_mut().zip(gc) {
                    *a += b;
                }
            }
            g
        });
        (LossValue { total, l_x, l_c }, grad)
    }
}
