//! Limited-memory BFGS with the two-loop recursion and an Armijo
//! backtracking line search. The optimizer state is plain data so that it
//! can be checkpointed and resumed.

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    /// Sufficient-decrease constant.
    pub armijo_c1: f64,
    /// Step shrink factor on a failed trial.
    pub shrink: f64,
    pub max_line_search: usize,
    /// Length of the first step, taken along the negative gradient before
    /// any curvature pairs are stored.
    pub first_step_norm: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            armijo_c1: 1e-4,
            shrink: 0.5,
            max_line_search: 20,
            first_step_norm: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LbfgsState {
    pub x: Vec<f64>,
    pub f: f64,
    pub g: Vec<f64>,
    /// Oldest pair first.
    pub s_hist: Vec<Vec<f64>>,
    pub y_hist: Vec<Vec<f64>>,
    pub iteration: usize,
}

impl LbfgsState {
    pub fn new(x: Vec<f64>, f: f64, g: Vec<f64>) -> Self {
        Self {
            x,
            f,
            g,
            s_hist: Vec::new(),
            y_hist: Vec::new(),
            iteration: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepResult {
    Accepted { f_old: f64, f_new: f64, step: f64, trials: usize },
    /// No trial point met the sufficient-decrease test; the state is unchanged.
    LineSearchFailed,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `-H g` where `H` is the L-BFGS inverse Hessian approximation.
pub fn two_loop_direction(g: &[f64], s_hist: &[Vec<f64>], y_hist: &[Vec<f64>]) -> Vec<f64> {
    let m = s_hist.len();
    let mut q = g.to_vec();
    let mut alphas = vec![0.0; m];
    let mut rhos = vec![0.0; m];
    for i in (0..m).rev() {
        rhos[i] = 1.0 / dot(&y_hist[i], &s_hist[i]);
        alphas[i] = rhos[i] * dot(&s_hist[i], &q);
        for (qv, yv) in q.iter_mut().zip(&y_hist[i]) {
            *qv -= alphas[i] * yv;
        }
    }
    if m > 0 {
        let gamma = dot(&s_hist[m - 1], &y_hist[m - 1]) / dot(&y_hist[m - 1], &y_hist[m - 1]);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for i in 0..m {
        let beta = rhos[i] * dot(&y_hist[i], &q);
        for (qv, sv) in q.iter_mut().zip(&s_hist[i]) {
            *qv += (alphas[i] - beta) * sv;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// One outer iteration. `eval` returns the objective and gradient; an error
/// from `eval` counts as a failed trial.
pub fn lbfgs_step(
    state: &mut LbfgsState,
    cfg: &LbfgsConfig,
    eval: &mut dyn FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
) -> StepResult {
    let mut dir = two_loop_direction(&state.g, &state.s_hist, &state.y_hist);
    let mut slope = dot(&dir, &state.g);
    if !(slope < 0.0) {
        log::warn!("L-BFGS direction is not a descent direction; resetting memory");
        state.s_hist.clear();
        state.y_hist.clear();
        dir = state.g.iter().map(|v| -v).collect();
        slope = dot(&dir, &state.g);
    }
    let mut step = if state.s_hist.is_empty() {
        let gn = dot(&state.g, &state.g).sqrt();
        if gn > 0.0 {
            (cfg.first_step_norm / gn).min(1.0)
        } else {
            1.0
        }
    } else {
        1.0
    };
    for trial in 1..=cfg.max_line_search {
        let x_new: Vec<f64> = state.x.iter().zip(&dir).map(|(x, d)| x + step * d).collect();
        match eval(&x_new) {
            Ok((f_new, g_new)) if f_new.is_finite() && f_new <= state.f + cfg.armijo_c1 * step * slope => {
                let s: Vec<f64> = x_new.iter().zip(&state.x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g_new.iter().zip(&state.g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
                    state.s_hist.push(s);
                    state.y_hist.push(y);
                    if state.s_hist.len() > cfg.memory {
                        state.s_hist.remove(0);
                        state.y_hist.remove(0);
                    }
                }
                let f_old = state.f;
                state.x = x_new;
                state.f = f_new;
                state.g = g_new;
                state.iteration += 1;
                return StepResult::Accepted {
                    f_old,
                    f_new,
                    step,
                    trials: trial,
                };
            }
            Ok(_) => {}
            Err(e) => log::warn!("line search trial {trial} failed: {e}"),
        }
        step *= cfg.shrink;
    }
    StepResult::LineSearchFailed
}
