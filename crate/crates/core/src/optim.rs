//! Small deterministic optimisers: limited-memory BFGS for smooth objectives
//! and a bounded compass search for noisy-free but non-smooth ones.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub max_iters: usize,
    pub memory: usize,
    /// Stop once the gradient's sup-norm falls below this.
    pub grad_tol: f64,
    /// Stop once the relative decrease of `f` over one step falls below this.
    pub f_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            memory: 8,
            grad_tol: 1e-6,
            f_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimise `f` from `x0` with L-BFGS and a backtracking Armijo line search.
///
/// `f` writes the gradient into its second argument and returns the value.
/// Non-finite values are treated as `+inf`, so the line search backs away
/// from them. The returned value never exceeds `f(x0)`.
pub fn lbfgs<F>(mut f: F, x0: &[f64], opts: LbfgsOptions) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Minimum { x, f: fx, iterations: 0 };
    }
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut iterations = 0;

    while iterations < opts.max_iters {
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < opts.grad_tol {
            break;
        }
        iterations += 1;

        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &d);
            for i in 0..n {
                d[i] -= a * y[i];
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &d);
            for i in 0..n {
                d[i] += s[i] * (a - b);
            }
        }
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            hist.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }

        let mut step = if hist.is_empty() {
            1.0 / g.iter().map(|v| v.abs()).sum::<f64>().max(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..40 {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            let f_try = f(&x_new, &mut g_new);
            if f_try.is_finite()
                && g_new.iter().all(|v| v.is_finite())
                && f_try <= fx + 1e-4 * step * slope
            {
                accepted = Some(f_try);
                break;
            }
            step *= 0.5;
        }
        let Some(f_next) = accepted else { break };

        let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if hist.len() == opts.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        let decrease = fx - f_next;
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        fx = f_next;
        if decrease <= opts.f_tol * fx.abs().max(1.0) {
            break;
        }
    }
    Minimum { x, f: fx, iterations }
}

/// Maximise `f` over the box `[0,1]^d` by compass search.
///
/// Polls `±step` along every axis (clamped to the box), moves to the first
/// improvement, halves the step when no poll improves, and stops once the
/// step drops below `min_step` or `max_evals` evaluations are spent. The
/// result is never worse than the start.
pub fn compass_maximize<F>(mut f: F, x0: &[f64], step0: f64, min_step: f64, max_evals: usize) -> (Vec<f64>, f64)
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut evals = 1;
    let mut step = step0;
    let mut trial = x.clone();
    while step >= min_step && evals < max_evals {
        let mut improved = false;
        'poll: for i in 0..x.len() {
            for sign in [1.0, -1.0] {
                let v = (x[i] + sign * step).clamp(0.0, 1.0);
                if v == x[i] {
                    continue;
                }
                trial.copy_from_slice(&x);
                trial[i] = v;
                let ft = f(&trial);
                evals += 1;
                if ft > fx {
                    x.copy_from_slice(&trial);
                    fx = ft;
                    improved = true;
                    break 'poll;
                }
                if evals >= max_evals {
                    break 'poll;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (x, fx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    #[test]
    fn lbfgs_solves_rosenbrock() {
        let opts = LbfgsOptions {
            max_iters: 500,
            ..Default::default()
        };
        let m = lbfgs(rosenbrock, &[-1.2, 1.0], opts);
        assert!((m.x[0] - 1.0).abs() < 1e-4, "{:?}", m);
        assert!((m.x[1] - 1.0).abs() < 1e-4, "{:?}", m);
    }

    #[test]
    fn lbfgs_never_worse_than_start() {
        let start = [0.3, -0.7];
        let mut g = [0.0; 2];
        let f0 = rosenbrock(&start, &mut g);
        let m = lbfgs(rosenbrock, &start, LbfgsOptions { max_iters: 3, ..Default::default() });
        assert!(m.f <= f0);
    }

    #[test]
    fn lbfgs_backs_off_non_finite_regions() {
        let f = |x: &[f64], g: &mut [f64]| {
            if x[0] < 0.0 {
                g[0] = f64::NAN;
                return f64::NAN;
            }
            g[0] = 2.0 * (x[0] - 0.1);
            (x[0] - 0.1).powi(2)
        };
        let m = lbfgs(f, &[3.0], LbfgsOptions::default());
        assert!((m.x[0] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn compass_finds_box_maximum() {
        let f = |x: &[f64]| -(x[0] - 0.3).powi(2) - (x[1] - 1.2).powi(2);
        let (x, v) = compass_maximize(f, &[0.5, 0.5], 0.25, 1e-6, 10_000);
        assert!((x[0] - 0.3).abs() < 1e-5);
        assert_eq!(x[1], 1.0);
        assert!(v <= 0.0);
    }
}
