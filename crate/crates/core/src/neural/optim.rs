//! First-order (Adam) and quasi-Newton (L-BFGS) minimizers over flat
//! parameter vectors.

use std::collections::VecDeque;

use super::NeuralError;

/// A differentiable scalar function of a flat vector.
pub trait Objective {
    fn value_grad(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>), NeuralError>;
}

impl<F> Objective for F
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), NeuralError>,
{
    fn value_grad(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>), NeuralError> {
        self(x)
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update of `x` along `grad`.
    pub fn step(&mut self, x: &mut [f64], grad: &[f64]) {
        assert_eq!(x.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..x.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            x[i] -= self.learning_rate * mhat / (vhat.sqrt() + self.epsilon);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when `‖g‖∞` falls below this.
    pub gradient_tolerance: f64,
    /// Stop when `|f_k − f_{k+1}| / max(|f_k|, |f_{k+1}|)` falls below this.
    pub change_tolerance: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iterations: 500,
            gradient_tolerance: 1e-10,
            change_tolerance: 1e-14,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbfgsStop {
    Gradient,
    Change,
    MaxIterations,
    LineSearch,
    Callback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsReport {
    pub iterations: usize,
    pub evaluations: usize,
    pub value: f64,
    pub stop: LbfgsStop,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Probe {
    alpha: f64,
    f: f64,
    dphi: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

/// Minimizer of the cubic through `(a, fa, da)` and `(b, fb, db)`, kept
/// inside the bracket; falls back to bisection.
fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    if disc >= 0.0 {
        let d2 = disc.sqrt() * (b - a).signum();
        let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
        let margin = 0.1 * (hi - lo);
        if t.is_finite() && t > lo + margin && t < hi - margin {
            return t;
        }
    }
    0.5 * (lo + hi)
}

/// Strong-Wolfe line search along `d`.
#[allow(clippy::too_many_arguments)]
fn line_search<O: Objective + ?Sized>(
    obj: &mut O,
    x: &[f64],
    f0: f64,
    d: &[f64],
    dphi0: f64,
    alpha0: f64,
    cfg: &LbfgsConfig,
    evals: &mut usize,
) -> Result<Option<Probe>, NeuralError> {
    let mut eval = |alpha: f64, evals: &mut usize| -> Result<Probe, NeuralError> {
        let xa: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
        let (f, g) = obj.value_grad(&xa)?;
        *evals += 1;
        let dphi = dot(&g, d);
        let (f, dphi) = if f.is_finite() && dphi.is_finite() {
            (f, dphi)
        } else {
            (f64::INFINITY, f64::INFINITY)
        };
        Ok(Probe { alpha, f, dphi, x: xa, g })
    };
    // Sufficient decrease, relaxed by a few ulps of |f0| so that the search
    // still makes progress once differences in f reach roundoff; an
    // accepted point never has f above f0.
    let slack = 8.0 * f64::EPSILON * f0.abs();
    let armijo = |p: &Probe| p.f <= f0 && p.f <= f0 + cfg.c1 * p.alpha * dphi0 + slack;
    let curvature = |p: &Probe| p.dphi.abs() <= -cfg.c2 * dphi0;

    let mut prev = Probe {
        alpha: 0.0,
        f: f0,
        dphi: dphi0,
        x: x.to_vec(),
        g: Vec::new(),
    };
    let mut alpha = alpha0;
    let mut best: Option<Probe> = None;
    let mut bracket = None;
    for i in 0..cfg.max_line_search {
        let p = eval(alpha, evals)?;
        if !armijo(&p) || (i > 0 && p.f >= prev.f) {
            bracket = Some((prev, p));
            break;
        }
        if curvature(&p) {
            return Ok(Some(p));
        }
        if p.dphi >= 0.0 {
            bracket = Some((p, prev));
            break;
        }
        alpha *= 2.0;
        prev = p;
        if best.as_ref().map_or(true, |b| prev.f < b.f) {
            best = Some(Probe {
                alpha: prev.alpha,
                f: prev.f,
                dphi: prev.dphi,
                x: prev.x.clone(),
                g: prev.g.clone(),
            });
        }
    }
    let Some((mut lo, mut hi)) = bracket else {
        return Ok(best);
    };
    for _ in 0..cfg.max_line_search {
        let a = if hi.f.is_finite() {
            cubic_min(lo.alpha, lo.f, lo.dphi, hi.alpha, hi.f, hi.dphi)
        } else {
            0.5 * (lo.alpha + hi.alpha)
        };
        if (hi.alpha - lo.alpha).abs() < 1e-16 * lo.alpha.abs().max(1.0) {
            break;
        }
        let p = eval(a, evals)?;
        if !armijo(&p) || p.f >= lo.f {
            hi = p;
        } else {
            if curvature(&p) {
                return Ok(Some(p));
            }
            if p.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = p;
        }
    }
    // accept the best sufficient-decrease point found, if any
    Ok((lo.alpha > 0.0 && armijo(&lo)).then_some(lo).or(best))
}

/// Limited-memory BFGS with a strong-Wolfe line search. `callback` sees
/// `(iteration, value)` after every accepted step and may stop the run by
/// returning `false`.
pub fn lbfgs<O, C>(
    obj: &mut O,
    x0: Vec<f64>,
    cfg: &LbfgsConfig,
    mut callback: C,
) -> Result<(Vec<f64>, LbfgsReport), NeuralError>
where
    O: Objective + ?Sized,
    C: FnMut(usize, f64) -> bool,
{
    let mut x = x0;
    let (mut f, mut g) = obj.value_grad(&x)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(NeuralError::NonFinite { iteration: 0 });
    }
    let mut evals = 1;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let report = |iterations, evaluations, value, stop| LbfgsReport {
        iterations,
        evaluations,
        value,
        stop,
    };
    for iter in 0..cfg.max_iterations {
        if inf_norm(&g) <= cfg.gradient_tolerance {
            return Ok((x, report(iter, evals, f, LbfgsStop::Gradient)));
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|qi| *qi *= gamma);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut d: Vec<f64> = q.into_iter().map(|v| -v).collect();
        let mut dphi0 = dot(&g, &d);
        if !(dphi0 < 0.0) {
            history.clear();
            d = g.iter().map(|v| -v).collect();
            dphi0 = dot(&g, &d);
        }
        let alpha0 = if history.is_empty() {
            (1.0 / g.iter().map(|v| v.abs()).sum::<f64>()).min(1.0)
        } else {
            1.0
        };
        let Some(p) = line_search(obj, &x, f, &d, dphi0, alpha0, cfg, &mut evals)? else {
            return Ok((x, report(iter, evals, f, LbfgsStop::LineSearch)));
        };
        let s: Vec<f64> = p.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = p.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if history.len() == cfg.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let change = (f - p.f).abs() / f.abs().max(p.f.abs()).max(f64::MIN_POSITIVE);
        x = p.x;
        f = p.f;
        g = p.g;
        if !callback(iter + 1, f) {
            return Ok((x, report(iter + 1, evals, f, LbfgsStop::Callback)));
        }
        if change < cfg.change_tolerance {
            return Ok((x, report(iter + 1, evals, f, LbfgsStop::Change)));
        }
    }
    Ok((x, report(cfg.max_iterations, evals, f, LbfgsStop::MaxIterations)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>), NeuralError> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Ok((f, g))
    }

    #[test]
    fn adam_first_step_is_learning_rate_times_sign() {
        let mut adam = Adam::new(3, 1e-3);
        let mut x = vec![0.0, 0.0, 0.0];
        adam.step(&mut x, &[5.0, -0.01, 0.0]);
        assert!((x[0] + 1e-3).abs() < 1e-9);
        assert!((x[1] - 1e-3).abs() < 1e-6);
        assert_eq!(x[2], 0.0);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut adam = Adam::new(2, 0.05);
        let mut x = vec![3.0, -2.0];
        for _ in 0..2000 {
            let g = vec![2.0 * (x[0] - 1.0), 20.0 * (x[1] + 0.5)];
            adam.step(&mut x, &g);
        }
        assert!((x[0] - 1.0).abs() < 1e-3 && (x[1] + 0.5).abs() < 1e-3, "{x:?}");
    }

    #[test]
    fn lbfgs_solves_rosenbrock() {
        let mut obj = rosenbrock;
        let cfg = LbfgsConfig {
            max_iterations: 200,
            change_tolerance: 0.0,
            ..Default::default()
        };
        let (x, rep) = lbfgs(&mut obj, vec![-1.2, 1.0], &cfg, |_, _| true).unwrap();
        assert!(rep.value < 1e-8, "{rep:?}");
        assert!((x[0] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn lbfgs_converges_fast_on_a_quadratic() {
        // ill-conditioned diagonal quadratic in 20 dimensions
        let diag: Vec<f64> = (0..20).map(|i| 1.0 + i as f64 * 5.0).collect();
        let mut obj = |x: &[f64]| -> Result<(f64, Vec<f64>), NeuralError> {
            let f = 0.5 * x.iter().zip(&diag).map(|(v, d)| d * v * v).sum::<f64>();
            Ok((f, x.iter().zip(&diag).map(|(v, d)| d * v).collect()))
        };
        let cfg = LbfgsConfig {
            change_tolerance: 0.0,
            gradient_tolerance: 1e-9,
            ..Default::default()
        };
        let (_, rep) = lbfgs(&mut obj, vec![1.0; 20], &cfg, |_, _| true).unwrap();
        assert_eq!(rep.stop, LbfgsStop::Gradient);
        assert!(rep.iterations <= 60, "{rep:?}");
        assert!(rep.value < 1e-16);
    }

    #[test]
    fn lbfgs_finds_minimiser_of_ten_variable_quadratic() {
        // f = ½ (x − c)ᵀ A (x − c) with A = tridiag(−1, 4, −1)
        let c: Vec<f64> = (1..=10).map(|i| (i as f64).sqrt()).collect();
        let apply = |x: &[f64]| -> Vec<f64> {
            (0..10)
                .map(|i| {
                    4.0 * x[i] - if i > 0 { x[i - 1] } else { 0.0 } - if i < 9 { x[i + 1] } else { 0.0 }
                })
                .collect()
        };
        let mut obj = |x: &[f64]| -> Result<(f64, Vec<f64>), NeuralError> {
            let e: Vec<f64> = x.iter().zip(&c).map(|(a, b)| a - b).collect();
            let ae = apply(&e);
            Ok((0.5 * dot(&e, &ae), ae))
        };
        let cfg = LbfgsConfig {
            max_iterations: 30,
            change_tolerance: 0.0,
            gradient_tolerance: 1e-10,
            ..Default::default()
        };
        let (x, rep) = lbfgs(&mut obj, vec![0.0; 10], &cfg, |_, _| true).unwrap();
        assert_eq!(rep.stop, LbfgsStop::Gradient, "{rep:?}");
        assert!(x.iter().zip(&c).all(|(a, e)| (a - e).abs() < 1e-8));
    }

    #[test]
    fn lbfgs_returns_immediately_at_a_stationary_point() {
        let mut calls = 0;
        let mut obj = |_: &[f64]| -> Result<(f64, Vec<f64>), NeuralError> {
            calls += 1;
            Ok((3.0, vec![0.0, 0.0]))
        };
        let (x, rep) = lbfgs(&mut obj, vec![1.0, 2.0], &LbfgsConfig::default(), |_, _| true).unwrap();
        assert_eq!(x, vec![1.0, 2.0]);
        assert_eq!((rep.iterations, rep.stop), (0, LbfgsStop::Gradient));
        assert_eq!(calls, 1);
    }

    #[test]
    fn adam_zero_gradient_and_constant_gradient() {
        let mut adam = Adam::new(2, 1e-3);
        let mut x = vec![0.5, -0.5];
        adam.step(&mut x, &[0.0, 0.0]);
        assert_eq!(x, vec![0.5, -0.5]);
        let mut adam = Adam::new(1, 1e-3);
        let mut x = vec![0.0];
        let mut last = 0.0;
        for _ in 0..5000 {
            let before = x[0];
            adam.step(&mut x, &[0.37]);
            last = before - x[0];
        }
        assert!((last - 1e-3).abs() < 1e-9, "{last}");
    }

    #[test]
    fn lbfgs_monotone_and_callback_stops() {
        let mut obj = rosenbrock;
        let mut values = Vec::new();
        let (_, rep) = lbfgs(&mut obj, vec![-1.2, 1.0], &LbfgsConfig::default(), |i, f| {
            values.push(f);
            i < 5
        })
        .unwrap();
        assert_eq!(rep.stop, LbfgsStop::Callback);
        assert_eq!(values.len(), 5);
        assert!(values.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let mut obj = |_: &[f64]| -> Result<(f64, Vec<f64>), NeuralError> { Ok((f64::NAN, vec![0.0])) };
        assert!(matches!(
            lbfgs(&mut obj, vec![0.0], &LbfgsConfig::default(), |_, _| true),
            Err(NeuralError::NonFinite { iteration: 0 })
        ));
    }
}
