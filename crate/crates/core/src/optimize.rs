//! Projected limited-memory BFGS for smooth objectives on a box.

use std::collections::VecDeque;

/// Objective with gradient.
pub trait Problem {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds<'a> {
    pub lower: &'a [f64],
    pub upper: &'a [f64],
}

impl Bounds<'_> {
    pub fn project(&self, x: &mut [f64]) {
        for ((xi, lo), hi) in x.iter_mut().zip(self.lower).zip(self.upper) {
            *xi = xi.clamp(*lo, *hi);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iters: usize,
    /// Stop when the projected gradient's ∞-norm falls below this.
    pub gtol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { memory: 10, max_iters: 1000, gtol: 1e-9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Gradient,
    /// No sufficient decrease along the search path.
    Stalled,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub termination: Termination,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central differences, one-sided where a step would leave the box.
pub fn central_difference<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], step: f64, bounds: Option<Bounds<'_>>) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let (lo, hi) = bounds.map_or((f64::NEG_INFINITY, f64::INFINITY), |b| (b.lower[i], b.upper[i]));
            let up = x[i] + step <= hi;
            let down = x[i] - step >= lo;
            let (a, b) = match (down, up) {
                (true, true) | (false, false) => (x[i] - step, x[i] + step),
                (false, true) => (x[i], x[i] + step),
                (true, false) => (x[i] - step, x[i]),
            };
            probe[i] = b;
            let fb = f(&probe);
            probe[i] = a;
            let fa = f(&probe);
            probe[i] = x[i];
            if b == a {
                0.0
            } else {
                (fb - fa) / (b - a)
            }
        })
        .collect()
}

fn projected_gradient_norm(x: &[f64], g: &[f64], bounds: &Bounds<'_>) -> f64 {
    x.iter()
        .zip(g)
        .enumerate()
        .map(|(i, (xi, gi))| ((xi - gi).clamp(bounds.lower[i], bounds.upper[i]) - xi).abs())
        .fold(0.0, f64::max)
}

/// Minimizes `problem` over the box starting from `x0` (projected first).
///
/// `observer` sees every accepted iterate, starting with the projected `x0`.
pub fn minimize<P: Problem + ?Sized>(
    problem: &P,
    x0: &[f64],
    bounds: Bounds<'_>,
    options: &LbfgsOptions,
    observer: &mut dyn FnMut(&[f64], f64),
) -> Minimum {
    let n = x0.len();
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let mut f = problem.value(&x);
    let mut g = problem.gradient(&x);
    observer(&x, f);

    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(options.memory);
    let mut iterations = 0;
    let termination = loop {
        if projected_gradient_norm(&x, &g, &bounds) <= options.gtol {
            break Termination::Gradient;
        }
        if iterations >= options.max_iters {
            break Termination::MaxIters;
        }

        // variables pinned at a bound by the gradient stay fixed this step
        let free: Vec<bool> = (0..n)
            .map(|i| {
                let at_lo = x[i] <= bounds.lower[i] && g[i] > 0.0;
                let at_hi = x[i] >= bounds.upper[i] && g[i] < 0.0;
                !(at_lo || at_hi)
            })
            .collect();
        let masked = |v: &mut Vec<f64>| {
            for (vi, keep) in v.iter_mut().zip(&free) {
                if !keep {
                    *vi = 0.0;
                }
            }
        };

        // two-loop recursion
        let mut q = g.clone();
        masked(&mut q);
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let scale = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|qi| *qi *= scale);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        masked(&mut dir);
        if dot(&dir, &g) >= 0.0 {
            history.clear();
            dir = g.iter().map(|v| -v).collect();
            masked(&mut dir);
        }

        let mut step = if history.is_empty() {
            let gmax = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if gmax > 1.0 {
                1.0 / gmax
            } else {
                1.0
            }
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            bounds.project(&mut trial);
            let moved: Vec<f64> = trial.iter().zip(&x).map(|(t, xi)| t - xi).collect();
            let decrease = dot(&g, &moved);
            if decrease >= 0.0 || moved.iter().all(|m| *m == 0.0) {
                step *= 0.5;
                continue;
            }
            let ft = problem.value(&trial);
            if ft <= f + 1e-4 * decrease {
                accepted = Some((trial, ft, moved));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, s)) = accepted else {
            break Termination::Stalled;
        };

        let g_new = problem.gradient(&x_new);
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if history.len() == options.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        f = f_new;
        g = g_new;
        iterations += 1;
        observer(&x, f);
    };

    Minimum { x, value: f, iterations, termination }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosenbrock;

    impl Problem for Rosenbrock {
        fn value(&self, x: &[f64]) -> f64 {
            (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
        }
        fn gradient(&self, x: &[f64]) -> Vec<f64> {
            vec![
                -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]),
                200.0 * (x[1] - x[0] * x[0]),
            ]
        }
    }

    #[test]
    fn rosenbrock_unconstrained() {
        let wide = [-10.0, -10.0];
        let high = [10.0, 10.0];
        let bounds = Bounds { lower: &wide, upper: &high };
        let m = minimize(&Rosenbrock, &[-1.2, 1.0], bounds, &LbfgsOptions::default(), &mut |_, _| {});
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{m:?}");
        assert!(m.value < 1e-12);
    }

    #[test]
    fn active_bound() {
        // minimum of Rosenbrock with x0 <= 0.5 sits on the bound
        let lo = [-2.0, -2.0];
        let hi = [0.5, 2.0];
        let bounds = Bounds { lower: &lo, upper: &hi };
        let m = minimize(&Rosenbrock, &[-1.0, 1.5], bounds, &LbfgsOptions::default(), &mut |_, _| {});
        assert!((m.x[0] - 0.5).abs() < 1e-12);
        assert!((m.x[1] - 0.25).abs() < 1e-5, "{m:?}");
    }

    #[test]
    fn observer_sees_monotone_values() {
        let lo = [-5.0, -5.0];
        let hi = [5.0, 5.0];
        let mut seen = Vec::new();
        minimize(&Rosenbrock, &[3.0, -3.0], Bounds { lower: &lo, upper: &hi }, &LbfgsOptions::default(), &mut |_, f| {
            seen.push(f)
        });
        assert!(seen.len() > 2);
        assert!(seen.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn zero_width_box_returns_start() {
        let lo = [0.0, 0.0];
        let m = minimize(&Rosenbrock, &[1.0, 1.0], Bounds { lower: &lo, upper: &lo }, &LbfgsOptions::default(), &mut |_, _| {});
        assert_eq!(m.x, vec![0.0, 0.0]);
        assert_eq!(m.iterations, 0);
    }

    #[test]
    fn difference_gradient() {
        let f = |x: &[f64]| x[0].powi(3) + x[1] * x[0];
        let g = central_difference(f, &[2.0, 1.0], 1e-6, None);
        assert!((g[0] - 13.0).abs() < 1e-6 && (g[1] - 2.0).abs() < 1e-6);
        let lo = [2.0, 0.0];
        let hi = [3.0, 1.0];
        let g = central_difference(f, &[2.0, 1.0], 1e-6, Some(Bounds { lower: &lo, upper: &hi }));
        assert!((g[0] - 13.0).abs() < 1e-4 && (g[1] - 2.0).abs() < 1e-6);
    }
}
