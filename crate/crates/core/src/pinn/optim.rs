//! Adam and L-BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, x: &mut [f64], g: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            x[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Minimizer of the cubic interpolating two points with values and slopes,
/// clamped to `bounds`; falls back to bisection.
fn cubic_min(x1: f64, f1: f64, g1: f64, x2: f64, f2: f64, g2: f64, bounds: (f64, f64)) -> f64 {
    let (lo, hi) = if bounds.0 <= bounds.1 { bounds } else { (bounds.1, bounds.0) };
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let d2_sq = d1 * d1 - g1 * g2;
    if d2_sq >= 0.0 {
        let d2 = d2_sq.sqrt();
        let t = if x1 <= x2 {
            x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        } else {
            x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        };
        if t.is_finite() {
            return t.clamp(lo, hi);
        }
    }
    0.5 * (lo + hi)
}

pub struct LineSearchResult {
    pub t: f64,
    pub f: f64,
    pub g: Vec<f64>,
    pub evals: usize,
}

/// Strong-Wolfe line search along `d` from `x` (bracketing then zoom).
pub fn strong_wolfe<F>(
    fg: &mut F,
    x: &[f64],
    mut t: f64,
    d: &[f64],
    f0: f64,
    g0: &[f64],
    c1: f64,
    c2: f64,
    max_evals: usize,
) -> LineSearchResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let gtd0 = dot(g0, d);
    let d_norm = inf_norm(d);
    let mut eval = |t: f64| {
        let xt: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + t * b).collect();
        let (f, g) = fg(&xt);
        let gtd = dot(&g, d);
        (f, g, gtd)
    };
    let (mut f_new, mut g_new, mut gtd_new) = eval(t);
    let mut evals = 1;
    let (mut t_prev, mut f_prev, mut g_prev, mut gtd_prev) = (0.0, f0, g0.to_vec(), gtd0);

    // Bracketing phase.
    let mut bracket: Option<[(f64, f64, Vec<f64>, f64); 2]> = None;
    let mut done = false;
    while evals < max_evals {
        if !f_new.is_finite() {
            // Shrink into the finite region.
            t *= 0.5;
            let r = eval(t);
            (f_new, g_new, gtd_new) = r;
            evals += 1;
            continue;
        }
        if f_new > f0 + c1 * t * gtd0 || (evals > 1 && f_new >= f_prev) {
            bracket = Some([(t_prev, f_prev, g_prev.clone(), gtd_prev), (t, f_new, g_new.clone(), gtd_new)]);
            break;
        }
        if gtd_new.abs() <= -c2 * gtd0 {
            done = true;
            break;
        }
        if gtd_new >= 0.0 {
            bracket = Some([(t, f_new, g_new.clone(), gtd_new), (t_prev, f_prev, g_prev.clone(), gtd_prev)]);
            break;
        }
        let min_step = t + 0.01 * (t - t_prev);
        let max_step = t * 10.0;
        let next = cubic_min(t_prev, f_prev, gtd_prev, t, f_new, gtd_new, (min_step, max_step));
        t_prev = t;
        f_prev = f_new;
        g_prev = g_new.clone();
        gtd_prev = gtd_new;
        t = next;
        let r = eval(t);
        (f_new, g_new, gtd_new) = r;
        evals += 1;
    }
    if done {
        return LineSearchResult { t, f: f_new, g: g_new, evals };
    }
    let Some(mut br) = bracket else {
        return LineSearchResult { t, f: f_new, g: g_new, evals };
    };

    // Zoom phase; br[0] is the low end (sufficient decrease), br[1] the other.
    let mut insufficient = false;
    while evals < max_evals {
        let (lo_t, hi_t) = (br[0].0, br[1].0);
        if (hi_t - lo_t).abs() * d_norm < 1e-14 {
            break;
        }
        let mut tz = cubic_min(br[0].0, br[0].1, br[0].3, br[1].0, br[1].1, br[1].3, (lo_t, hi_t));
        // Keep trial points away from the bracket ends.
        let (a, b) = (lo_t.min(hi_t), lo_t.max(hi_t));
        let eps = 0.1 * (b - a);
        if (b - tz).min(tz - a) < eps {
            if insufficient || tz >= b || tz <= a {
                tz = if (tz - b).abs() < (tz - a).abs() { b - eps } else { a + eps };
                insufficient = false;
            } else {
                insufficient = true;
            }
        } else {
            insufficient = false;
        }
        let (fz, gz, gtdz) = eval(tz);
        evals += 1;
        if !fz.is_finite() || fz > f0 + c1 * tz * gtd0 || fz >= br[0].1 {
            br[1] = (tz, fz, gz, gtdz);
        } else {
            if gtdz.abs() <= -c2 * gtd0 {
                return LineSearchResult { t: tz, f: fz, g: gz, evals };
            }
            if gtdz * (br[1].0 - br[0].0) >= 0.0 {
                br[1] = br[0].clone();
            }
            br[0] = (tz, fz, gz, gtdz);
        }
    }
    let (t, f, g, _) = br[0].clone();
    LineSearchResult { t, f, g, evals }
}

/// Limited-memory BFGS state.
pub struct Lbfgs {
    history: usize,
    s: VecDeque<Vec<f64>>,
    y: VecDeque<Vec<f64>>,
    pub tol_grad: f64,
    pub tol_change: f64,
    pub max_ls_evals: usize,
    started: bool,
}

/// Outcome of one L-BFGS iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IterStatus {
    Progress,
    Converged,
    Stalled,
}

impl Lbfgs {
    pub fn new(history: usize) -> Self {
        Self {
            history,
            s: VecDeque::new(),
            y: VecDeque::new(),
            tol_grad: 1e-12,
            tol_change: 1e-18,
            max_ls_evals: 25,
            started: false,
        }
    }

    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q: Vec<f64> = g.iter().map(|v| -v).collect();
        let k = self.s.len();
        let mut alpha = vec![0.0; k];
        let rho: Vec<f64> = (0..k).map(|i| 1.0 / dot(&self.y[i], &self.s[i])).collect();
        for i in (0..k).rev() {
            alpha[i] = rho[i] * dot(&self.s[i], &q);
            for (qj, yj) in q.iter_mut().zip(&self.y[i]) {
                *qj -= alpha[i] * yj;
            }
        }
        if k > 0 {
            let gamma = dot(&self.s[k - 1], &self.y[k - 1]) / dot(&self.y[k - 1], &self.y[k - 1]);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for i in 0..k {
            let beta = rho[i] * dot(&self.y[i], &q);
            for (qj, sj) in q.iter_mut().zip(&self.s[i]) {
                *qj += (alpha[i] - beta) * sj;
            }
        }
        q
    }

    /// One iteration from `(x, f, g)`, updating them in place.
    pub fn iterate<F>(&mut self, fg: &mut F, x: &mut Vec<f64>, f: &mut f64, g: &mut Vec<f64>) -> IterStatus
    where
        F: FnMut(&[f64]) -> (f64, Vec<f64>),
    {
        if inf_norm(g) <= self.tol_grad {
            return IterStatus::Converged;
        }
        let mut d = self.direction(g);
        if !(dot(g, &d) < 0.0) {
            // Not a descent direction: restart from steepest descent.
            self.s.clear();
            self.y.clear();
            d = g.iter().map(|v| -v).collect();
        }
        let t0 = if self.started && !self.s.is_empty() {
            1.0
        } else {
            (1.0 / g.iter().map(|v| v.abs()).sum::<f64>()).min(1.0)
        };
        self.started = true;
        let ls = strong_wolfe(fg, x, t0, &d, *f, g, 1e-4, 0.9, self.max_ls_evals);
        if !(ls.f.is_finite() && ls.f <= *f) || ls.t == 0.0 {
            self.s.clear();
            self.y.clear();
            self.started = false;
            return IterStatus::Stalled;
        }
        let s: Vec<f64> = d.iter().map(|v| ls.t * v).collect();
        let y: Vec<f64> = ls.g.iter().zip(g.iter()).map(|(a, b)| a - b).collect();
        let ys = dot(&y, &s);
        if ys > 1e-10 * dot(&s, &s).max(f64::MIN_POSITIVE) {
            if self.s.len() == self.history {
                self.s.pop_front();
                self.y.pop_front();
            }
            self.s.push_back(s.clone());
            self.y.push_back(y);
        }
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi += si;
        }
        let change = (*f - ls.f).abs();
        *f = ls.f;
        *g = ls.g;
        if change <= self.tol_change || inf_norm(&s) <= 1e-16 {
            return IterStatus::Converged;
        }
        IterStatus::Progress
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        (f, g)
    }

    #[test]
    fn lbfgs_solves_rosenbrock() {
        let mut opt = Lbfgs::new(10);
        let mut x = vec![-1.2, 1.0];
        let (mut f, mut g) = rosenbrock(&x);
        for _ in 0..200 {
            if opt.iterate(&mut rosenbrock, &mut x, &mut f, &mut g) != IterStatus::Progress {
                break;
            }
        }
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6, "{x:?}");
    }

    #[test]
    fn line_search_satisfies_strong_wolfe() {
        let x = [-1.2, 1.0];
        let (f0, g0) = rosenbrock(&x);
        let d: Vec<f64> = g0.iter().map(|v| -v).collect();
        let mut fg = rosenbrock;
        let ls = strong_wolfe(&mut fg, &x, 1e-3, &d, f0, &g0, 1e-4, 0.9, 50);
        let gtd0 = dot(&g0, &d);
        assert!(ls.f <= f0 + 1e-4 * ls.t * gtd0);
        assert!(dot(&ls.g, &d).abs() <= 0.9 * gtd0.abs());
    }

    #[test]
    fn adam_decreases_a_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.1);
        for _ in 0..500 {
            let g = vec![2.0 * x[0], 8.0 * x[1]];
            opt.step(&mut x, &g);
        }
        assert!(x[0].abs() < 1e-2 && x[1].abs() < 1e-2);
    }
}
