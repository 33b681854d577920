//! Component predictors used by the stepper: trained networks, or a direct
//! integration of the component for diagnostics.

use nalgebra::DMatrix;

use crate::baselines::single_component_solve;
use crate::error::{Error, Result};
use crate::models::{DynamicComponent, Machine};
use crate::pinn::{input_profile, Evaluation, PinnInput, PinnWeights};

/// Maps `(dt, x0, local voltage coefficients)` to the component state after `dt`.
pub trait ComponentPredictor: Sync {
    fn component_id(&self) -> &str;
    fn dt_max(&self) -> f64;
    /// Fails when the predictor cannot serve `machine` with order-`r` profiles.
    fn check_compatible(&self, machine: &Machine, r: usize) -> Result<()>;
    /// Whether the control input is part of the query.
    fn takes_control(&self) -> bool;
    fn evaluate(&self, inp: &PinnInput, with_jacobian: bool) -> Result<Evaluation>;
}

impl ComponentPredictor for PinnWeights {
    fn component_id(&self) -> &str {
        &self.metadata.component_id
    }

    fn dt_max(&self) -> f64 {
        self.metadata.dt_max
    }

    fn check_compatible(&self, machine: &Machine, r: usize) -> Result<()> {
        PinnWeights::check_compatible(self, machine, r)
    }

    fn takes_control(&self) -> bool {
        self.metadata.include_control
    }

    fn evaluate(&self, inp: &PinnInput, with_jacobian: bool) -> Result<Evaluation> {
        PinnWeights::evaluate(self, inp, with_jacobian)
    }
}

/// Integrates the component itself with RK4; input sensitivities come from
/// central differences. Slow, but free of surrogate error.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    pub machine: Machine,
    pub h: f64,
    pub dt_max: f64,
}

impl OraclePredictor {
    pub fn new(machine: Machine, h: f64) -> Self {
        Self { machine, h, dt_max: f64::INFINITY }
    }

    fn solve(&self, inp: &PinnInput) -> Result<Vec<f64>> {
        single_component_solve(&self.machine, &inp.x0, &input_profile(inp)?, inp.dt, self.h)
    }
}

impl ComponentPredictor for OraclePredictor {
    fn component_id(&self) -> &str {
        &self.machine.id
    }

    fn dt_max(&self) -> f64 {
        self.dt_max
    }

    fn check_compatible(&self, machine: &Machine, _r: usize) -> Result<()> {
        if machine.id != self.machine.id || machine.model() != self.machine.model() {
            return Err(Error::LayoutMismatch(format!("oracle for '{}' cannot serve '{}'", self.machine.id, machine.id)));
        }
        Ok(())
    }

    fn takes_control(&self) -> bool {
        false
    }

    fn evaluate(&self, inp: &PinnInput, with_jacobian: bool) -> Result<Evaluation> {
        let x = self.solve(inp)?;
        let prof = input_profile(inp)?;
        let dx_ddt = self.machine.update(&x, prof.eval(inp.dt))?;
        let jacobian = if with_jacobian {
            let p = x.len();
            let n_raw = 1 + p + inp.xi.len();
            let mut jac = DMatrix::zeros(p, n_raw);
            for k in 0..p {
                jac[(k, 0)] = dx_ddt[k];
            }
            let eps = 1e-6;
            for c in 1..n_raw {
                let shifted = |d: f64| {
                    let mut q = inp.clone();
                    if c <= p {
                        q.x0[c - 1] += d;
                    } else {
                        q.xi[c - 1 - p] += d;
                    }
                    self.solve(&q)
                };
                let (a, b) = (shifted(eps)?, shifted(-eps)?);
                for k in 0..p {
                    jac[(k, c)] = (a[k] - b[k]) / (2.0 * eps);
                }
            }
            Some(jac)
        } else {
            None
        };
        Ok(Evaluation { x, dx_ddt, jacobian })
    }
}
