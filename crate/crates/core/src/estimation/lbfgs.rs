//! Limited-memory BFGS with a backtracking Armijo line search.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// Why the optimizer stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Gradient sup-norm fell below the tolerance.
    Converged,
    /// Neither the objective (relative change below `ftol`) nor the gradient
    /// improved for several iterations, or no descent step could be found.
    Stalled,
    MaxIter,
    /// The objective was never finite along the search direction.
    Diverged,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LbfgsOptions {
    pub max_iter: usize,
    pub gtol: f64,
    pub ftol: f64,
    pub memory: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    /// Objective after each accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

const C1: f64 = 1e-4;
const MAX_HALVINGS: usize = 50;
const FTOL_PATIENCE: usize = 10;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Minimize `f`, which returns the value and gradient or `None` where the
/// objective is undefined.
pub(crate) fn minimize<F>(x0: Vec<f64>, opts: &LbfgsOptions, mut f: F) -> LbfgsResult
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let Some((mut fx, mut g)) = f(&x0).filter(|(v, g)| v.is_finite() && g.iter().all(|x| x.is_finite())) else {
        return LbfgsResult {
            x: x0,
            f: f64::NAN,
            grad: vec![f64::NAN; n],
            iterations: 0,
            termination: Termination::Diverged,
            history: Vec::new(),
        };
    };
    let mut x = x0;
    let mut history = vec![fx];
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut flat = 0usize;
    let mut best_g = sup(&g);
    let mut iter = 0usize;
    let termination = loop {
        if sup(&g) < opts.gtol {
            break Termination::Converged;
        }
        if iter >= opts.max_iter {
            break Termination::MaxIter;
        }
        iter += 1;

        let mut d = two_loop(&g, &mem);
        let mut slope = dot(&d, &g);
        if !(slope < 0.0) {
            mem.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&d, &g);
        }
        let mut step = if mem.is_empty() { (1.0 / sup(&g).max(1e-300)).min(1.0) } else { 1.0 };

        let mut accepted = None;
        let mut any_finite = false;
        for _ in 0..MAX_HALVINGS {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            if let Some((fn_, gn)) = f(&xn) {
                if fn_.is_finite() && gn.iter().all(|v| v.is_finite()) {
                    any_finite = true;
                    let armijo = fn_ <= fx + C1 * step * slope;
                    let noise = fn_ <= fx && (fx - fn_).abs() <= 1e-12 * fx.abs().max(1.0) && sup(&gn) < sup(&g);
                    if armijo || noise {
                        accepted = Some((xn, fn_, gn));
                        break;
                    }
                }
            }
            step *= 0.5;
        }

        let Some((xn, fn_, gn)) = accepted else {
            if mem.is_empty() {
                break if any_finite { Termination::Stalled } else { Termination::Diverged };
            }
            mem.clear();
            continue;
        };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&yv, &yv).sqrt() && sy > 0.0 {
            if mem.len() == opts.memory {
                mem.pop_front();
            }
            mem.push_back((s, yv, 1.0 / sy));
        }

        let rel = (fx - fn_).abs() / fx.abs().max(fn_.abs()).max(1.0);
        x = xn;
        fx = fn_;
        g = gn;
        history.push(fx);
        // flat: negligible decrease and no new low in the gradient
        let g_now = sup(&g);
        let improved = g_now < 0.99 * best_g;
        best_g = best_g.min(g_now);
        if rel < opts.ftol && !improved {
            flat += 1;
            if flat >= FTOL_PATIENCE && g_now >= opts.gtol {
                break Termination::Stalled;
            }
        } else {
            flat = 0;
        }
    };
    LbfgsResult {
        x,
        f: fx,
        grad: g,
        iterations: iter,
        termination,
        history,
    }
}

fn two_loop(g: &[f64], mem: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alpha = Vec::with_capacity(mem.len());
    for (s, y, rho) in mem.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alpha.push(a);
    }
    if let Some((s, y, _)) = mem.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in mem.iter().zip(alpha.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}
