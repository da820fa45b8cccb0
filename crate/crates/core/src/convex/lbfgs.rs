//! Limited-memory BFGS with interpolating Armijo backtracking.

use std::collections::VecDeque;

use serde::Serialize;

const MEMORY: usize = 10;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACK: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MinimizeStatus {
    Converged,
    /// Iteration cap reached, or no further decrease was possible.
    Stalled,
    /// A value or gradient was not finite.
    Numerical,
}

#[derive(Debug, Clone, Serialize)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_l1: f64,
    pub iterations: usize,
    pub status: MinimizeStatus,
    /// Objective value at the start and after every accepted step.
    pub trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn l1(a: &[f64], free: &[bool]) -> f64 {
    a.iter()
        .zip(free)
        .filter(|(_, &f)| f)
        .map(|(x, _)| x.abs())
        .sum()
}

/// Minimizes `f` from `x0` over the coordinates with `free[i]`; the others are
/// held fixed. `f` returns the value and writes the gradient.
///
/// Stops once the L1 norm of the free gradient is at most `grad_tol`.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, free: &[bool], grad_tol: f64, max_iter: usize) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let dim = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; dim];
    let mut fx = f(&x, &mut g);
    let mask = |v: &mut [f64]| {
        for (vi, &fr) in v.iter_mut().zip(free) {
            if !fr {
                *vi = 0.0;
            }
        }
    };
    let mut trace = vec![fx];
    let finish = |x: Vec<f64>, fx: f64, g: &[f64], it: usize, status, trace| Minimum {
        grad_l1: l1(g, free),
        x,
        value: fx,
        iterations: it,
        status,
        trace,
    };
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return finish(x, fx, &g, 0, MinimizeStatus::Numerical, trace);
    }

    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(MEMORY);
    let mut x_new = vec![0.0; dim];
    let mut g_new = vec![0.0; dim];
    for it in 0..max_iter {
        let mut gm = g.clone();
        mask(&mut gm);
        if l1(&gm, free) <= grad_tol {
            return finish(x, fx, &g, it, MinimizeStatus::Converged, trace);
        }

        // Two-loop recursion.
        let mut d = gm.clone();
        let mut coef = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &d);
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
            coef.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|di| *di *= gamma);
        }
        for ((s, y, rho), a) in history.iter().zip(coef.iter().rev()) {
            let b = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (a - b) * si);
        }
        d.iter_mut().for_each(|di| *di = -*di);
        mask(&mut d);
        let mut slope = dot(&gm, &d);
        if !(slope < 0.0) {
            history.clear();
            d = gm.iter().map(|v| -v).collect();
            slope = dot(&gm, &d);
        }

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACK {
            for i in 0..dim {
                x_new[i] = x[i] + step * d[i];
            }
            let f_new = f(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= fx + ARMIJO * step * slope {
                if g_new.iter().any(|v| !v.is_finite()) {
                    return finish(x, fx, &g, it, MinimizeStatus::Numerical, trace);
                }
                let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                let mut y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                mask(&mut y);
                let sy = dot(&s, &y);
                if sy > 1e-300 && sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
                    if history.len() == MEMORY {
                        history.pop_front();
                    }
                    history.push_back((s, y, 1.0 / sy));
                }
                std::mem::swap(&mut x, &mut x_new);
                std::mem::swap(&mut g, &mut g_new);
                fx = f_new;
                trace.push(fx);
                accepted = true;
                break;
            }
            // Minimizer of the quadratic through f(0), f'(0) and f(step).
            let curv = f_new - fx - slope * step;
            let trial = if f_new.is_finite() && curv > 0.0 {
                -slope * step * step / (2.0 * curv)
            } else {
                0.5 * step
            };
            step = trial.clamp(0.1 * step, 0.5 * step);
        }
        if !accepted {
            let status = if l1(&g, free) <= grad_tol {
                MinimizeStatus::Converged
            } else {
                MinimizeStatus::Stalled
            };
            return finish(x, fx, &g, it + 1, status, trace);
        }
    }
    let status = if l1(&g, free) <= grad_tol {
        MinimizeStatus::Converged
    } else {
        MinimizeStatus::Stalled
    };
    finish(x, fx, &g, max_iter, status, trace)
}
