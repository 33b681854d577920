//! Power-series voltage profiles.
//!
//! Each bus voltage over a step is `V(t) exp(j theta(t))` with magnitude and
//! angle given as polynomials in `t - t0`. The per-bus coefficient vector is
//! interleaved `(V0, theta0, V1, theta1, ..., Vr, thetar)` and the system
//! vector concatenates buses in ascending order.

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct VoltageProfile {
    pub t0: f64,
    pub magnitude: Vec<f64>,
    pub angle: Vec<f64>,
}

fn horner(coeffs: &[f64], tau: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * tau + c)
}

fn horner_derivative(coeffs: &[f64], tau: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (k, c)| acc * tau + k as f64 * c)
}

impl VoltageProfile {
    pub fn new(t0: f64, magnitude: Vec<f64>, angle: Vec<f64>) -> Result<Self> {
        if magnitude.is_empty() || magnitude.len() != angle.len() {
            return Err(Error::Profile(format!(
                "magnitude and angle series need equal non-zero length, got {} and {}",
                magnitude.len(),
                angle.len()
            )));
        }
        Ok(Self { t0, magnitude, angle })
    }

    /// Order-`r` profile holding the phasor `v` constant.
    pub fn constant(t0: f64, v: Complex64, order: usize) -> Self {
        let mut magnitude = vec![0.0; order + 1];
        let mut angle = vec![0.0; order + 1];
        magnitude[0] = v.norm();
        angle[0] = v.arg();
        Self { t0, magnitude, angle }
    }

    pub fn order(&self) -> usize {
        self.magnitude.len() - 1
    }

    pub fn magnitude_at(&self, t: f64) -> f64 {
        horner(&self.magnitude, t - self.t0)
    }

    pub fn angle_at(&self, t: f64) -> f64 {
        horner(&self.angle, t - self.t0)
    }

    pub fn eval(&self, t: f64) -> Complex64 {
        Complex64::from_polar(self.magnitude_at(t), self.angle_at(t))
    }

    /// `d v / dt`.
    pub fn time_derivative(&self, t: f64) -> Complex64 {
        let tau = t - self.t0;
        let mag = horner(&self.magnitude, tau);
        let ang = horner(&self.angle, tau);
        let dmag = horner_derivative(&self.magnitude, tau);
        let dang = horner_derivative(&self.angle, tau);
        Complex64::from_polar(1.0, ang) * Complex64::new(dmag, mag * dang)
    }

    /// Derivative of `v(t)` with respect to each coefficient in interleaved
    /// order; element `c` holds `(d Re v / d xi_c, d Im v / d xi_c)`.
    pub fn sensitivity(&self, t: f64) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); 2 * (self.order() + 1)];
        self.sensitivity_into(t, &mut out);
        out
    }

    pub(crate) fn sensitivity_into(&self, t: f64, out: &mut [Complex64]) {
        let tau = t - self.t0;
        let v = self.eval(t);
        let rot = Complex64::from_polar(1.0, self.angle_at(t));
        let jv = Complex64::new(-v.im, v.re);
        let mut pow = 1.0;
        for k in 0..=self.order() {
            out[2 * k] = rot * pow;
            out[2 * k + 1] = jv * pow;
            pow *= tau;
        }
    }

    pub fn coefficients(&self) -> Vec<f64> {
        let mut xi = Vec::with_capacity(2 * self.magnitude.len());
        self.write_coefficients(&mut xi);
        xi
    }

    fn write_coefficients(&self, out: &mut Vec<f64>) {
        for (v, th) in self.magnitude.iter().zip(&self.angle) {
            out.push(*v);
            out.push(*th);
        }
    }

    pub fn from_coefficients(t0: f64, xi: &[f64]) -> Result<Self> {
        if xi.is_empty() || xi.len() % 2 != 0 {
            return Err(Error::Dimension { context: "bus coefficient vector", expected: 2, actual: xi.len() });
        }
        let magnitude = xi.iter().step_by(2).copied().collect();
        let angle = xi.iter().skip(1).step_by(2).copied().collect();
        Ok(Self { t0, magnitude, angle })
    }

    /// Same polynomial expressed around a new origin.
    pub fn reanchor(&self, new_t0: f64) -> Self {
        let d = new_t0 - self.t0;
        Self { t0: new_t0, magnitude: shift_polynomial(&self.magnitude, d), angle: shift_polynomial(&self.angle, d) }
    }

    /// Same profile truncated or zero-padded to order `r`.
    pub fn with_order(&self, order: usize) -> Self {
        let mut magnitude = self.magnitude.clone();
        let mut angle = self.angle.clone();
        magnitude.resize(order + 1, 0.0);
        angle.resize(order + 1, 0.0);
        Self { t0: self.t0, magnitude, angle }
    }

    /// Fails when the magnitude is not strictly positive at any of `times`.
    pub fn check_positive(&self, times: &[f64]) -> Result<()> {
        for &t in times {
            let m = self.magnitude_at(t);
            if !(m > 0.0) {
                return Err(Error::Profile(format!("non-positive voltage magnitude {m} at t = {t}")));
            }
        }
        Ok(())
    }
}

/// Coefficients of `p(s + d)` given those of `p(s)`.
fn shift_polynomial(coeffs: &[f64], d: f64) -> Vec<f64> {
    let n = coeffs.len();
    let mut out = vec![0.0; n];
    for (k, &c) in coeffs.iter().enumerate() {
        let mut binom = 1.0;
        let mut pow = 1.0;
        // Accumulate C(k, m) d^(k-m) from m = k downwards.
        for m in (0..=k).rev() {
            out[m] += c * binom * pow;
            binom = binom * m as f64 / (k - m + 1) as f64;
            pow *= d;
        }
    }
    out
}

pub fn eval_profile(p: &VoltageProfile, t: f64) -> Complex64 {
    p.eval(t)
}

pub fn profile_sensitivity(p: &VoltageProfile, t: f64) -> Vec<Complex64> {
    p.sensitivity(t)
}

/// Voltage profiles of every bus, sharing origin and order.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemProfile {
    pub t0: f64,
    pub order: usize,
    pub profiles: Vec<VoltageProfile>,
}

impl SystemProfile {
    pub fn new(profiles: Vec<VoltageProfile>) -> Result<Self> {
        let first = profiles.first().ok_or_else(|| Error::Profile("system profile needs at least one bus".into()))?;
        let (t0, order) = (first.t0, first.order());
        if profiles.iter().any(|p| p.t0 != t0 || p.order() != order) {
            return Err(Error::Profile("bus profiles must share origin and order".into()));
        }
        Ok(Self { t0, order, profiles })
    }

    /// Constant profiles at the given bus phasors.
    pub fn flat(t0: f64, v: &[Complex64], order: usize) -> Self {
        Self { t0, order, profiles: v.iter().map(|&vi| VoltageProfile::constant(t0, vi, order)).collect() }
    }

    pub fn n_buses(&self) -> usize {
        self.profiles.len()
    }

    /// Coefficients per bus, `2(r + 1)`.
    pub fn bus_width(&self) -> usize {
        2 * (self.order + 1)
    }

    pub fn eval(&self, t: f64) -> Vec<Complex64> {
        self.profiles.iter().map(|p| p.eval(t)).collect()
    }

    pub fn reanchor(&self, new_t0: f64) -> Self {
        Self { t0: new_t0, order: self.order, profiles: self.profiles.iter().map(|p| p.reanchor(new_t0)).collect() }
    }

    pub fn pack(&self) -> Vec<f64> {
        pack(self)
    }
}

pub fn pack(profile: &SystemProfile) -> Vec<f64> {
    let mut xi = Vec::with_capacity(profile.bus_width() * profile.n_buses());
    for p in &profile.profiles {
        p.write_coefficients(&mut xi);
    }
    xi
}

pub fn unpack(xi: &[f64], n: usize, order: usize, t0: f64) -> Result<SystemProfile> {
    let width = 2 * (order + 1);
    if xi.len() != width * n {
        return Err(Error::Dimension { context: "flat voltage coefficients", expected: width * n, actual: xi.len() });
    }
    let profiles = xi
        .chunks(width)
        .map(|c| VoltageProfile::from_coefficients(t0, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(SystemProfile { t0, order, profiles })
}
