//! Box-constrained limited-memory BFGS with a projected backtracking line
//! search. Small and deterministic; tuned for a handful of parameters.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct BoxLbfgs {
    pub max_iter: usize,
    /// Stop when the infinity norm of the projected gradient falls below this.
    pub pgtol: f64,
    /// Stop when `(f_k − f_{k+1}) / max(|f_k|, |f_{k+1}|, 1)` falls below this.
    pub ftol: f64,
    pub memory: usize,
    pub max_backtracks: usize,
}

impl Default for BoxLbfgs {
    fn default() -> Self {
        BoxLbfgs {
            max_iter: 200,
            pgtol: 1e-6,
            ftol: 1e7 * f64::EPSILON,
            memory: 10,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Termination {
    ProjectedGradient,
    FunctionChange,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

impl Minimum {
    pub fn converged(&self) -> bool {
        matches!(
            self.termination,
            Termination::ProjectedGradient | Termination::FunctionChange
        )
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

/// Components of `g` that do not push against an active bound.
fn free_mask(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> Vec<bool> {
    x.iter()
        .zip(g)
        .zip(lower.iter().zip(upper))
        .map(|((&xi, &gi), (&lo, &hi))| !((xi <= lo && gi > 0.0) || (xi >= hi && gi < 0.0)))
        .collect()
}

impl BoxLbfgs {
    /// Minimises `f` over `[lower, upper]`. `f` returns `None` where the
    /// objective is undefined; the line search backs off from such points.
    /// Returns `None` if `f` is undefined at the (projected) start.
    pub fn minimize<F>(&self, mut f: F, x0: &[f64], lower: &[f64], upper: &[f64]) -> Option<Minimum>
    where
        F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
    {
        let n = x0.len();
        let mut x = x0.to_vec();
        project(&mut x, lower, upper);
        let (mut fx, mut g) = f(&x)?;
        let mut evaluations = 1;
        let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();

        for iter in 0..self.max_iter {
            let mask = free_mask(&x, &g, lower, upper);
            let pg_norm = g
                .iter()
                .zip(&mask)
                .map(|(gi, free)| if *free { gi.abs() } else { 0.0 })
                .fold(0.0, f64::max);
            if pg_norm < self.pgtol {
                return Some(Minimum {
                    x,
                    f: fx,
                    grad: g,
                    iterations: iter,
                    evaluations,
                    termination: Termination::ProjectedGradient,
                });
            }

            let mut direction = self.two_loop(&g, &mask, &history);
            if dot(&direction, &g) >= 0.0 {
                history.clear();
                direction = g
                    .iter()
                    .zip(&mask)
                    .map(|(gi, m)| if *m { -gi } else { 0.0 })
                    .collect();
            }

            let mut step = if history.is_empty() {
                (1.0 / direction.iter().map(|d| d.abs()).fold(0.0, f64::max)).min(1.0)
            } else {
                1.0
            };
            let mut accepted = None;
            for _ in 0..self.max_backtracks {
                let mut trial: Vec<f64> = x
                    .iter()
                    .zip(&direction)
                    .map(|(xi, di)| xi + step * di)
                    .collect();
                project(&mut trial, lower, upper);
                let moved: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
                let decrease = dot(&g, &moved);
                if moved.iter().all(|m| *m == 0.0) {
                    break;
                }
                evaluations += 1;
                if let Some((ft, gt)) = f(&trial) {
                    if ft.is_finite() && ft <= fx + 1e-4 * decrease {
                        accepted = Some((trial, ft, gt));
                        break;
                    }
                }
                step *= 0.5;
            }

            let Some((x_new, f_new, g_new)) = accepted else {
                if !history.is_empty() {
                    // Retry from a steepest-descent step before giving up.
                    history.clear();
                    continue;
                }
                return Some(Minimum {
                    x,
                    f: fx,
                    grad: g,
                    iterations: iter,
                    evaluations,
                    termination: Termination::LineSearchFailed,
                });
            };

            let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-10 * dot(&y, &y) {
                if history.len() == self.memory {
                    history.pop_front();
                }
                history.push_back((s, y, 1.0 / sy));
            }

            let rel_change = (fx - f_new) / fx.abs().max(f_new.abs()).max(1.0);
            x = x_new;
            fx = f_new;
            g = g_new;
            if rel_change <= self.ftol {
                return Some(Minimum {
                    x,
                    f: fx,
                    grad: g,
                    iterations: iter + 1,
                    evaluations,
                    termination: Termination::FunctionChange,
                });
            }
            debug_assert_eq!(x.len(), n);
        }
        Some(Minimum {
            x,
            f: fx,
            grad: g,
            iterations: self.max_iter,
            evaluations,
            termination: Termination::MaxIterations,
        })
    }

    /// `−H g` on the free subspace via the L-BFGS two-loop recursion.
    fn two_loop(
        &self,
        g: &[f64],
        mask: &[bool],
        history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    ) -> Vec<f64> {
        let restrict = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .zip(mask)
                .map(|(x, m)| if *m { *x } else { 0.0 })
                .collect()
        };
        let mut q = restrict(g);
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(&restrict(s), &q);
            for (qi, yi) in q.iter_mut().zip(restrict(y)) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let (s, y) = (restrict(s), restrict(y));
            let yy = dot(&y, &y);
            if yy > 0.0 {
                let gamma = dot(&s, &y) / yy;
                if gamma > 0.0 {
                    q.iter_mut().for_each(|v| *v *= gamma);
                }
            }
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(&restrict(y), &q);
            for (qi, si) in q.iter_mut().zip(restrict(s)) {
                *qi += (a - b) * si;
            }
        }
        q.iter()
            .zip(mask)
            .map(|(v, m)| if *m { -v } else { 0.0 })
            .collect()
    }
}
