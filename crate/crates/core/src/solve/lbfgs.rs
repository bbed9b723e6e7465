//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::SolverConfig;

/// Why the iteration stopped without meeting the gradient tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Diagnostic {
    MaxIterations,
    LineSearchFailed,
    Stalled,
    NonFinite,
    /// Augmented-Lagrangian outer loop ended above the residual target.
    ConstraintUnmet,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    pub diagnostic: Option<Diagnostic>,
    /// Objective after every accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Minimizes `objective` from `x0`.
///
/// `objective(x, grad)` returns the value and writes the gradient.
/// `grad_scale` converts the raw max-norm of the gradient into the reported
/// (mesh-independent) gradient norm.
pub fn minimize<F>(mut objective: F, x0: Vec<f64>, config: &SolverConfig, grad_scale: f64) -> Outcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut value = objective(&x, &mut g);
    let mut evaluations = 1;
    let mut history = vec![value];
    let scaled = |g: &[f64]| inf_norm(g) * grad_scale;

    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(config.memory);
    let mut stalled = 0;
    let mut iterations = 0;
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];

    if !value.is_finite() {
        return Outcome {
            grad_norm: f64::INFINITY,
            x,
            value,
            iterations,
            evaluations,
            converged: false,
            diagnostic: Some(Diagnostic::NonFinite),
            history,
        };
    }

    let diagnostic = loop {
        let gnorm = scaled(&g);
        if gnorm <= config.gradient_tolerance * (1.0 + value.abs()) {
            return Outcome {
                x,
                value,
                iterations,
                evaluations,
                converged: true,
                grad_norm: gnorm,
                diagnostic: None,
                history,
            };
        }
        if iterations >= config.max_iterations {
            break Some(Diagnostic::MaxIterations);
        }

        let mut direction = two_loop(&g, &pairs);
        let mut slope = dot(&direction, &g);
        if !(slope < 0.0) {
            pairs.clear();
            direction = g.iter().map(|v| -v).collect();
            slope = dot(&direction, &g);
        }
        let initial_step = if pairs.is_empty() {
            (1e-2 / inf_norm(&direction)).min(1.0)
        } else {
            1.0
        };

        let mut search = LineSearch {
            objective: &mut objective,
            x: &x,
            d: &direction,
            f0: value,
            slope0: slope,
            c1: config.c1,
            c2: config.c2,
            max_evals: config.max_line_search,
            evals: 0,
        };
        let mut accepted = search.strong_wolfe(initial_step, &mut x_new, &mut g_new);
        if accepted.is_none() {
            accepted = search.backtrack(initial_step, &mut x_new, &mut g_new);
        }
        evaluations += search.evals;
        let Some((step, f_new)) = accepted else {
            if pairs.is_empty() {
                break Some(Diagnostic::LineSearchFailed);
            }
            // Retry from steepest descent before giving up.
            pairs.clear();
            continue;
        };
        if !f_new.is_finite() {
            break Some(Diagnostic::NonFinite);
        }
        debug_assert!(f_new <= value);

        let s: Vec<f64> = direction.iter().map(|d| step * d).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if pairs.len() == config.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }

        let decrease = value - f_new;
        if decrease <= 1e-15 * (1.0 + value.abs()) {
            stalled += 1;
        } else {
            stalled = 0;
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        value = f_new;
        history.push(value);
        iterations += 1;
        if stalled >= config.stall_iterations {
            break Some(Diagnostic::Stalled);
        }
    };

    Outcome {
        grad_norm: scaled(&g),
        x,
        value,
        iterations,
        evaluations,
        converged: false,
        diagnostic,
        history,
    }
}

fn two_loop(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

struct LineSearch<'a, F> {
    objective: &'a mut F,
    x: &'a [f64],
    d: &'a [f64],
    f0: f64,
    slope0: f64,
    c1: f64,
    c2: f64,
    max_evals: usize,
    evals: usize,
}

impl<F> LineSearch<'_, F>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    fn eval(&mut self, alpha: f64, x_new: &mut [f64], g_new: &mut [f64]) -> (f64, f64) {
        for ((xn, xi), di) in x_new.iter_mut().zip(self.x).zip(self.d) {
            *xn = xi + alpha * di;
        }
        self.evals += 1;
        let f = (self.objective)(x_new, g_new);
        (f, dot(g_new, self.d))
    }

    fn armijo(&self, alpha: f64, f: f64) -> bool {
        f <= self.f0 + self.c1 * alpha * self.slope0
    }

    /// Bracketing plus zoom; returns `(alpha, f(alpha))` with the state of
    /// the accepted point left in `x_new`, `g_new`.
    fn strong_wolfe(&mut self, alpha0: f64, x_new: &mut [f64], g_new: &mut [f64]) -> Option<(f64, f64)> {
        let mut prev = (0.0, self.f0, self.slope0);
        let mut alpha = alpha0;
        let mut first = true;
        while self.evals < self.max_evals {
            let (f, slope) = self.eval(alpha, x_new, g_new);
            if !f.is_finite() {
                alpha = 0.5 * (prev.0 + alpha);
                continue;
            }
            if !self.armijo(alpha, f) || (!first && f >= prev.1) {
                return self.zoom(prev, (alpha, f, slope), x_new, g_new);
            }
            if slope.abs() <= -self.c2 * self.slope0 {
                return Some((alpha, f));
            }
            if slope >= 0.0 {
                return self.zoom((alpha, f, slope), prev, x_new, g_new);
            }
            prev = (alpha, f, slope);
            alpha *= 2.0;
            first = false;
        }
        None
    }

    fn zoom(
        &mut self,
        mut lo: (f64, f64, f64),
        mut hi: (f64, f64, f64),
        x_new: &mut [f64],
        g_new: &mut [f64],
    ) -> Option<(f64, f64)> {
        while self.evals < self.max_evals {
            let alpha = interpolate(lo, hi);
            if (hi.0 - lo.0).abs() < 1e-16 * lo.0.abs().max(1e-300) {
                break;
            }
            let (f, slope) = self.eval(alpha, x_new, g_new);
            if !f.is_finite() || !self.armijo(alpha, f) || f >= lo.1 {
                hi = (alpha, f, slope);
            } else {
                if slope.abs() <= -self.c2 * self.slope0 {
                    return Some((alpha, f));
                }
                if slope * (hi.0 - lo.0) >= 0.0 {
                    hi = lo;
                }
                lo = (alpha, f, slope);
            }
        }
        // Fall back to the best sufficient-decrease point seen.
        if lo.0 > 0.0 && lo.1 < self.f0 {
            let (f, _) = self.eval(lo.0, x_new, g_new);
            return Some((lo.0, f));
        }
        None
    }

    fn backtrack(&mut self, alpha0: f64, x_new: &mut [f64], g_new: &mut [f64]) -> Option<(f64, f64)> {
        let mut alpha = alpha0;
        for _ in 0..60 {
            let (f, _) = self.eval(alpha, x_new, g_new);
            if f.is_finite() && self.armijo(alpha, f) && f < self.f0 {
                return Some((alpha, f));
            }
            alpha *= 0.5;
        }
        None
    }
}

/// Safeguarded cubic interpolation between two bracket ends.
fn interpolate(lo: (f64, f64, f64), hi: (f64, f64, f64)) -> f64 {
    let (a0, f0, g0) = lo;
    let (a1, f1, g1) = hi;
    let d1 = g0 + g1 - 3.0 * (f0 - f1) / (a0 - a1);
    let disc = d1 * d1 - g0 * g1;
    let lo_b = a0.min(a1);
    let hi_b = a0.max(a1);
    let width = hi_b - lo_b;
    if disc >= 0.0 && f1.is_finite() && g1.is_finite() {
        let d2 = disc.sqrt() * (a1 - a0).signum();
        let a = a1 - (a1 - a0) * (g1 + d2 - d1) / (g1 - g0 + 2.0 * d2);
        if a.is_finite() && a > lo_b + 0.1 * width && a < hi_b - 0.1 * width {
            return a;
        }
    }
    0.5 * (a0 + a1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let mut f = 0.0;
        g.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..x.len() - 1 {
            let a = x[i + 1] - x[i] * x[i];
            let b = 1.0 - x[i];
            f += 100.0 * a * a + b * b;
            g[i] += -400.0 * x[i] * a - 2.0 * b;
            g[i + 1] += 200.0 * a;
        }
        f
    }

    #[test]
    fn solves_rosenbrock() {
        let config = SolverConfig {
            gradient_tolerance: 1e-10,
            ..SolverConfig::default()
        };
        let out = minimize(rosenbrock, vec![-1.2, 1.0, -1.2, 1.0, 0.5], &config, 1.0);
        assert!(out.converged, "{:?}", out.diagnostic);
        assert!(out.x.iter().all(|v| (v - 1.0).abs() < 1e-6));
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn quadratic_converges_immediately_at_minimum() {
        let quad = |x: &[f64], g: &mut [f64]| {
            g.copy_from_slice(x);
            0.5 * dot(x, x)
        };
        let out = minimize(quad, vec![0.0; 4], &SolverConfig::default(), 1.0);
        assert!(out.converged);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn reports_iteration_cap() {
        let config = SolverConfig {
            max_iterations: 3,
            gradient_tolerance: 1e-14,
            ..SolverConfig::default()
        };
        let out = minimize(rosenbrock, vec![-1.2, 1.0], &config, 1.0);
        assert!(!out.converged);
        assert_eq!(out.diagnostic, Some(Diagnostic::MaxIterations));
    }
}
