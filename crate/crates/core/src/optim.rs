//! Limited-memory BFGS with box bounds and a backtracking Armijo line search.
//!
//! Bounds are handled by projection: the search direction is masked to the
//! variables not pinned at a bound, and trial points are clamped to the box.

use std::collections::VecDeque;

#[derive(Clone, Debug)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    /// Convergence when the projected gradient's ∞-norm drops below this.
    pub grad_tol: f64,
    pub history: usize,
    /// Per-coordinate `(lower, upper)` bounds; empty means unbounded.
    pub bounds: Vec<(f64, f64)>,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions { max_iter: 500, grad_tol: 1e-5, history: 10, bounds: Vec::new() }
    }
}

#[derive(Clone, Debug)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Objective failed (returned `None`) at the starting point.
#[derive(Clone, Debug)]
pub struct StartFailure;

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;
const STALL_LIMIT: usize = 8;

fn clamp(x: &mut [f64], bounds: &[(f64, f64)]) {
    if bounds.is_empty() {
        return;
    }
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

fn projected_grad(x: &[f64], g: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    if bounds.is_empty() {
        return g.to_vec();
    }
    x.iter()
        .zip(g)
        .zip(bounds)
        .map(|((&xi, &gi), &(lo, hi))| if (xi <= lo && gi > 0.0) || (xi >= hi && gi < 0.0) { 0.0 } else { gi })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimizes `f`, which returns the value and gradient or `None` where the
/// objective cannot be evaluated (treated as +∞ by the line search).
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &LbfgsOptions) -> Result<LbfgsResult, StartFailure>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let bounds = &opts.bounds;
    let mut x = x0.to_vec();
    clamp(&mut x, bounds);
    let (mut fx, mut g) = match f(&x) {
        Some((v, g)) if v.is_finite() && g.iter().all(|v| v.is_finite()) => (v, g),
        _ => return Err(StartFailure),
    };
    let mut evaluations = 1;
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut stall = 0;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        let pg = projected_grad(&x, &g, bounds);
        if inf_norm(&pg) < opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let free: Vec<bool> = pg.iter().map(|v| *v != 0.0).collect();

        let mut dir = two_loop(&pg, &hist);
        for (d, &fr) in dir.iter_mut().zip(&free) {
            if !fr {
                *d = 0.0;
            }
        }
        if dot(&dir, &pg) >= 0.0 {
            hist.clear();
            dir = pg.iter().map(|v| -v).collect();
        }

        let mut step = if hist.is_empty() { (1.0 / inf_norm(&dir)).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for attempt in 0..2 {
            for _ in 0..MAX_BACKTRACKS {
                let mut xt: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
                clamp(&mut xt, bounds);
                let dx: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
                if inf_norm(&dx) == 0.0 {
                    break;
                }
                evaluations += 1;
                if let Some((ft, gt)) = f(&xt) {
                    if ft.is_finite() && gt.iter().all(|v| v.is_finite()) && ft <= fx + ARMIJO_C1 * dot(&g, &dx) {
                        accepted = Some((xt, ft, gt));
                        break;
                    }
                }
                step *= 0.5;
            }
            if accepted.is_some() || attempt == 1 || hist.is_empty() {
                break;
            }
            // retry along steepest descent with fresh memory
            hist.clear();
            dir = pg.iter().map(|v| -v).collect();
            step = (1.0 / inf_norm(&dir)).min(1.0);
        }

        let Some((xn, fxn, gn)) = accepted else { break };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-10 * dot(&s, &s).sqrt() * dot(&yv, &yv).sqrt() {
            if hist.len() == opts.history {
                hist.pop_front();
            }
            hist.push_back((s, yv, 1.0 / sy));
        }
        if (fx - fxn).abs() <= 1e-14 * fx.abs().max(1.0) {
            stall += 1;
        } else {
            stall = 0;
        }
        x = xn;
        fx = fxn;
        g = gn;
        if stall >= STALL_LIMIT {
            break;
        }
    }
    if !converged {
        converged = inf_norm(&projected_grad(&x, &g, bounds)) < opts.grad_tol;
    }
    Ok(LbfgsResult { x, value: fx, grad: g, iterations, evaluations, converged })
}

fn two_loop(g: &[f64], hist: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = hist.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in hist.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Some((v, g))
    }

    #[test]
    fn solves_rosenbrock() {
        let r = minimize(rosenbrock, &[-1.2, 1.0], &LbfgsOptions::default()).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn respects_bounds() {
        let quad = |x: &[f64]| {
            Some(((x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2), vec![2.0 * (x[0] - 3.0), 2.0 * (x[1] + 1.0)]))
        };
        let opts = LbfgsOptions { bounds: vec![(-1.0, 1.0), (-5.0, 5.0)], ..Default::default() };
        let r = minimize(quad, &[0.0, 0.0], &opts).unwrap();
        assert!(r.converged);
        assert_eq!(r.x[0], 1.0);
        assert!((r.x[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn tolerates_failed_regions() {
        // undefined for x < 0.5
        let f = |x: &[f64]| {
            if x[0] < 0.5 {
                None
            } else {
                Some(((x[0] - 0.6).powi(2), vec![2.0 * (x[0] - 0.6)]))
            }
        };
        let r = minimize(f, &[3.0], &LbfgsOptions::default()).unwrap();
        assert!((r.x[0] - 0.6).abs() < 1e-5);
        assert!(minimize(f, &[0.0], &LbfgsOptions::default()).is_err());
    }
}
