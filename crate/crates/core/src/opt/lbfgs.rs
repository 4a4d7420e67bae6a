//! Limited-memory BFGS with two-loop recursion and a strong Wolfe line
//! search (cubic interpolation, initial trial step 1).

use super::{check_finite, dot, norm, MinimizeOutcome, Termination, TrainTrace};
use crate::error::Result;
use std::collections::VecDeque;
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct LbfgsConfig {
    /// Number of curvature pairs kept.
    pub memory: usize,
    pub max_iters: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Stop when the gradient norm falls below this.
    pub grad_tol: f64,
    /// Maximum objective evaluations per line search.
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 10,
            max_iters: 100,
            c1: 1e-4,
            c2: 0.9,
            grad_tol: 1e-10,
            max_line_search: 25,
        }
    }
}

/// Cubic interpolation of a step from two (position, value, slope) samples,
/// clamped to `bounds`.
fn cubic_interpolate(
    x1: f64,
    f1: f64,
    g1: f64,
    x2: f64,
    f2: f64,
    g2: f64,
    bounds: Option<(f64, f64)>,
) -> f64 {
    let (lo, hi) = match bounds {
        Some(b) => b,
        None => {
            if x1 < x2 {
                (x1, x2)
            } else {
                (x2, x1)
            }
        }
    };
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let d2_sq = d1 * d1 - g1 * g2;
    if d2_sq >= 0.0 {
        let d2 = d2_sq.sqrt();
        let min_pos = if x1 <= x2 {
            x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        } else {
            x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        };
        min_pos.clamp(lo, hi)
    } else {
        0.5 * (lo + hi)
    }
}

struct LineSearchResult {
    step: f64,
    f: f64,
    g: Vec<f64>,
}

/// Strong Wolfe line search: bracket then zoom. Returns None when no
/// acceptable step is found within the evaluation budget.
#[allow(clippy::too_many_arguments)]
fn strong_wolfe<F>(
    obj: &F,
    x: &[f64],
    f0: f64,
    d: &[f64],
    gtd0: f64,
    c1: f64,
    c2: f64,
    max_evals: usize,
) -> Option<LineSearchResult>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let eval = |t: f64| -> (f64, Vec<f64>, f64) {
        let xt: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + t * di).collect();
        let (f, g) = obj(&xt);
        let gtd = dot(&g, d);
        (f, g, gtd)
    };

    let mut t = 1.0;
    let (mut f_new, mut g_new, mut gtd_new) = eval(t);
    let mut evals = 1usize;
    let mut t_prev = 0.0;
    let mut f_prev = f0;
    let mut gtd_prev = gtd0;

    // Bracketing phase.
    let mut bracket: Option<([f64; 2], [f64; 2], [f64; 2])> = None;
    let mut done: Option<LineSearchResult> = None;
    while evals < max_evals {
        if !f_new.is_finite() {
            // Shrink toward zero until the objective is finite.
            t *= 0.5;
            let r = eval(t);
            f_new = r.0;
            g_new = r.1;
            gtd_new = r.2;
            evals += 1;
            continue;
        }
        if f_new > f0 + c1 * t * gtd0 || (evals > 1 && f_new >= f_prev) {
            bracket = Some(([t_prev, t], [f_prev, f_new], [gtd_prev, gtd_new]));
            break;
        }
        if gtd_new.abs() <= -c2 * gtd0 {
            done = Some(LineSearchResult {
                step: t,
                f: f_new,
                g: g_new.clone(),
            });
            break;
        }
        if gtd_new >= 0.0 {
            bracket = Some(([t_prev, t], [f_prev, f_new], [gtd_prev, gtd_new]));
            break;
        }
        // Expand.
        let min_step = t + 0.01 * (t - t_prev);
        let max_step = t * 10.0;
        let t_next = cubic_interpolate(
            t_prev,
            f_prev,
            gtd_prev,
            t,
            f_new,
            gtd_new,
            Some((min_step, max_step)),
        );
        t_prev = t;
        f_prev = f_new;
        gtd_prev = gtd_new;
        t = t_next;
        let r = eval(t);
        f_new = r.0;
        g_new = r.1;
        gtd_new = r.2;
        evals += 1;
    }
    if let Some(res) = done {
        return Some(res);
    }
    let ([mut t_lo, mut t_hi], [mut f_lo, mut f_hi], [mut g_lo, mut g_hi]) = bracket?;
    // Keep the full gradient at the low end so we can return it.
    let mut glo_vec: Option<Vec<f64>> = None;

    // Zoom phase.
    let mut insufficient = false;
    while evals < max_evals {
        if (t_hi - t_lo).abs() * norm(d) < 1e-14 {
            break;
        }
        let mut t_mid = cubic_interpolate(t_lo, f_lo, g_lo, t_hi, f_hi, g_hi, None);
        // Guard against stalling at the bracket boundary.
        let span = (t_hi.max(t_lo)) - (t_hi.min(t_lo));
        let eps = 0.1 * span;
        let near_edge = (t_hi.max(t_lo) - t_mid).min(t_mid - t_hi.min(t_lo)) < eps;
        if near_edge {
            if insufficient || t_mid >= t_hi.max(t_lo) || t_mid <= t_hi.min(t_lo) {
                t_mid = if (t_mid - t_hi.max(t_lo)).abs() < (t_mid - t_hi.min(t_lo)).abs() {
                    t_hi.max(t_lo) - eps
                } else {
                    t_hi.min(t_lo) + eps
                };
                insufficient = false;
            } else {
                insufficient = true;
            }
        } else {
            insufficient = false;
        }

        let (f_mid, g_mid_vec, gtd_mid) = eval(t_mid);
        evals += 1;
        if f_mid > f0 + c1 * t_mid * gtd0 || f_mid >= f_lo {
            t_hi = t_mid;
            f_hi = f_mid;
            g_hi = gtd_mid;
        } else {
            if gtd_mid.abs() <= -c2 * gtd0 {
                return Some(LineSearchResult {
                    step: t_mid,
                    f: f_mid,
                    g: g_mid_vec,
                });
            }
            if gtd_mid * (t_hi - t_lo) >= 0.0 {
                t_hi = t_lo;
                f_hi = f_lo;
                g_hi = g_lo;
            }
            t_lo = t_mid;
            f_lo = f_mid;
            g_lo = gtd_mid;
            glo_vec = Some(g_mid_vec);
        }
    }
    // Accept the best sufficient-decrease point found, if any.
    if let Some(g) = glo_vec {
        if f_lo < f0 {
            return Some(LineSearchResult {
                step: t_lo,
                f: f_lo,
                g,
            });
        }
    }
    None
}

/// Minimize `obj` from `x0`. The loss trace is non-increasing by
/// construction (strong Wolfe decrease or termination).
pub fn lbfgs_minimize<F>(obj: F, x0: &[f64], config: &LbfgsConfig) -> Result<MinimizeOutcome>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let start = Instant::now();
    let mut x = x0.to_vec();
    let (mut f, mut g) = obj(&x);
    check_finite(f, &g, "the L-BFGS starting point")?;
    let mut trace = TrainTrace::default();
    let mut last_t = start.elapsed().as_secs_f64();
    trace.push(f, norm(&g), last_t);

    let n = x.len();
    let mut s_hist: VecDeque<Vec<f64>> = VecDeque::with_capacity(config.memory);
    let mut y_hist: VecDeque<Vec<f64>> = VecDeque::with_capacity(config.memory);
    let mut rho_hist: VecDeque<f64> = VecDeque::with_capacity(config.memory);

    let mut termination = Termination::MaxIterations;
    for iter in 0..config.max_iters {
        if norm(&g) <= config.grad_tol {
            termination = Termination::GradientTolerance;
            break;
        }

        // Two-loop recursion.
        let mut q = g.clone();
        let k = s_hist.len();
        let mut alphas = vec![0.0; k];
        for i in (0..k).rev() {
            let alpha = rho_hist[i] * dot(&s_hist[i], &q);
            for j in 0..n {
                q[j] -= alpha * y_hist[i][j];
            }
            alphas[i] = alpha;
        }
        let gamma = if k > 0 {
            let sy = dot(&s_hist[k - 1], &y_hist[k - 1]);
            let yy = dot(&y_hist[k - 1], &y_hist[k - 1]);
            sy / yy
        } else {
            1.0
        };
        let mut r: Vec<f64> = q.iter().map(|v| gamma * v).collect();
        for i in 0..k {
            let beta = rho_hist[i] * dot(&y_hist[i], &r);
            for j in 0..n {
                r[j] += s_hist[i][j] * (alphas[i] - beta);
            }
        }
        let mut d: Vec<f64> = r.iter().map(|v| -v).collect();
        let mut gtd = dot(&g, &d);
        if gtd >= 0.0 {
            // Not a descent direction; fall back to steepest descent.
            d = g.iter().map(|v| -v).collect();
            gtd = -dot(&g, &g);
        }

        match strong_wolfe(
            &obj,
            &x,
            f,
            &d,
            gtd,
            config.c1,
            config.c2,
            config.max_line_search,
        ) {
            Some(res) => {
                let s: Vec<f64> = d.iter().map(|v| res.step * v).collect();
                let y: Vec<f64> = res.g.iter().zip(&g).map(|(a, b)| a - b).collect();
                for j in 0..n {
                    x[j] += s[j];
                }
                let sy = dot(&s, &y);
                if sy > 1e-10 * norm(&s) * norm(&y) {
                    if s_hist.len() == config.memory {
                        s_hist.pop_front();
                        y_hist.pop_front();
                        rho_hist.pop_front();
                    }
                    rho_hist.push_back(1.0 / sy);
                    s_hist.push_back(s);
                    y_hist.push_back(y);
                }
                f = res.f;
                g = res.g;
                let now = start.elapsed().as_secs_f64();
                trace.push(f, norm(&g), now - last_t);
                last_t = now;
            }
            None => {
                termination = Termination::LineSearchFailed { iteration: iter };
                break;
            }
        }
    }

    Ok(MinimizeOutcome {
        x,
        trace,
        termination,
    })
}
