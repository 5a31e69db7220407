//! iPiano: inertial forward-backward splitting for `min F(u) + G(u)` with `F`
//! smooth (possibly non-convex) and `G` convex with a cheap proximal map.
//!
//! ```text
//! u+ = prox_{tau G}(u - tau grad F(u) + gamma (u - u_prev))
//! ```
//!
//! The local Lipschitz estimate `L` is found by backtracking on
//! `F(u+) <= F(u) + <grad F(u), u+ - u> + L/2 |u+ - u|^2`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::foe::FoePrior;
use crate::image::Image;

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    /// Inertial weight, in `[0, 1)`.
    pub gamma: f64,
    /// Initial Lipschitz estimate `L_{-1}`.
    pub lipschitz_init: f64,
    /// Factor applied to `L` when the descent test fails.
    pub backtrack_factor: f64,
    /// `L` is divided by this after every accepted step.
    pub lipschitz_relax: f64,
    /// `tau = step_scale * (1 - gamma) / L`.
    pub step_scale: f64,
    pub max_iters: usize,
    /// Stop once `|u+ - u| / |u|` falls below this.
    pub rel_tol: f64,
    pub max_backtracks: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gamma: 0.8,
            lipschitz_init: 1.0,
            backtrack_factor: 1.2,
            lipschitz_relax: 1.05,
            step_scale: 1.99,
            max_iters: 60,
            rel_tol: 1e-6,
            max_backtracks: 80,
        }
    }
}

/// Iteration budget used below peak 5.
pub const LOW_PEAK_ITERS: usize = 150;
/// Iteration budget used at peak 5 and above.
pub const HIGH_PEAK_ITERS: usize = 60;

impl SolverConfig {
    pub fn for_peak(peak: f64) -> Self {
        Self {
            max_iters: if peak < 5.0 { LOW_PEAK_ITERS } else { HIGH_PEAK_ITERS },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!("gamma must be in [0, 1), got {}", self.gamma)));
        }
        if !(self.lipschitz_init > 0.0) {
            return Err(Error::invalid("lipschitz_init must be positive"));
        }
        if !(self.backtrack_factor > 1.0) {
            return Err(Error::invalid("backtrack_factor must exceed 1"));
        }
        if !(self.lipschitz_relax >= 1.0) {
            return Err(Error::invalid("lipschitz_relax must be at least 1"));
        }
        if !(self.step_scale > 0.0 && self.step_scale < 2.0) {
            return Err(Error::invalid("step_scale must be in (0, 2)"));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(Error::invalid("rel_tol must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Smooth part at the new iterate.
    pub f: f64,
    /// Non-smooth part at the new iterate.
    pub g: f64,
    /// Smooth part at the previous iterate.
    pub f_prev: f64,
    /// `<grad F(u), u+ - u>`.
    pub linear: f64,
    pub lipschitz: f64,
    pub tau: f64,
    pub step_norm: f64,
    pub backtracks: usize,
}

impl IterationRecord {
    /// Slack of the backtracking test; non-negative for every accepted step.
    pub fn descent_slack(&self) -> f64 {
        self.f_prev + self.linear + 0.5 * self.lipschitz * self.step_norm * self.step_norm - self.f
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolverTrace {
    pub records: Vec<IterationRecord>,
}

impl SolverTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,F,G,L,step_norm\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{:e},{:e},{:e},{:e}", r.iteration, r.f, r.g, r.lipschitz, r.step_norm);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxIterations,
    /// The descent test could not be met within `max_backtracks`; the last
    /// accepted iterate is returned.
    BacktrackLimit,
}

#[derive(Clone, Debug)]
pub struct SolverOutcome {
    pub solution: Image,
    pub trace: SolverTrace,
    pub stop: StopReason,
}

impl SolverOutcome {
    pub fn objective(&self) -> Option<f64> {
        self.trace.last().map(|r| r.f + r.g)
    }
}

/// The smooth part `F`.
pub trait SmoothTerm {
    fn energy(&self, u: &Image) -> f64;
    fn energy_and_gradient(&self, u: &Image) -> (f64, Image);
}

/// The convex part `G`, accessed through its proximal map.
pub trait ProxTerm {
    fn energy(&self, u: &Image) -> f64;
    /// `argmin_u 1/2 |u - u_tilde|^2 + tau G(u)`.
    fn prox(&self, u_tilde: &Image, tau: f64) -> Image;
}

impl SmoothTerm for FoePrior {
    fn energy(&self, u: &Image) -> f64 {
        FoePrior::energy(self, u)
    }

    fn energy_and_gradient(&self, u: &Image) -> (f64, Image) {
        FoePrior::energy_and_gradient(self, u)
    }
}

/// `G = 0`.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoProx;

impl ProxTerm for NoProx {
    fn energy(&self, _u: &Image) -> f64 {
        0.0
    }

    fn prox(&self, u_tilde: &Image, _tau: f64) -> Image {
        u_tilde.clone()
    }
}

/// `G(u) = lambda/2 |u - v|^2`.
#[derive(Clone, Debug)]
pub struct QuadraticData<'a> {
    pub target: &'a Image,
    pub lambda: f64,
}

impl ProxTerm for QuadraticData<'_> {
    fn energy(&self, u: &Image) -> f64 {
        let d: f64 = u.data().iter().zip(self.target.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        0.5 * self.lambda * d
    }

    fn prox(&self, u_tilde: &Image, tau: f64) -> Image {
        prox_quadratic_unchecked(u_tilde, tau * self.lambda, self.target)
    }
}

/// `G(u) = lambda sum_p (u_p - obs_p log u_p)`, the I-divergence up to a
/// constant; `+inf` outside `u > 0` (or `u >= 0` where `obs = 0`).
#[derive(Clone, Debug)]
pub struct IDivergenceData<'a> {
    pub obs: &'a Image,
    pub lambda: f64,
}

impl ProxTerm for IDivergenceData<'_> {
    fn energy(&self, u: &Image) -> f64 {
        let mut e = 0.0;
        for (&x, &f) in u.data().iter().zip(self.obs.data()) {
            if f == 0.0 {
                if x < 0.0 {
                    return f64::INFINITY;
                }
                e += x;
            } else {
                if x <= 0.0 {
                    return f64::INFINITY;
                }
                e += x - f * x.ln();
            }
        }
        self.lambda * e
    }

    fn prox(&self, u_tilde: &Image, tau: f64) -> Image {
        prox_idiv_unchecked(u_tilde, tau * self.lambda, self.obs)
    }
}

fn prox_quadratic_unchecked(u_tilde: &Image, t: f64, v: &Image) -> Image {
    let s = 1.0 / (1.0 + t);
    u_tilde.zip_map(v, |a, b| (a + t * b) * s)
}

#[inline]
fn prox_idiv_scalar(u_tilde: f64, t: f64, obs: f64) -> f64 {
    let a = u_tilde - t;
    if obs == 0.0 {
        return a.max(0.0);
    }
    let disc = (a * a + 4.0 * t * obs).sqrt();
    if a >= 0.0 {
        0.5 * (a + disc)
    } else {
        // same root, written without cancellation
        2.0 * t * obs / (disc - a)
    }
}

fn prox_idiv_unchecked(u_tilde: &Image, t: f64, obs: &Image) -> Image {
    u_tilde.zip_map(obs, |u, f| prox_idiv_scalar(u, t, f))
}

/// `(u_tilde + t v) / (1 + t)`: the proximal map of `t/2 |u - v|^2`.
pub fn prox_quadratic(u_tilde: &Image, t: f64, v: &Image) -> Result<Image> {
    if !(t >= 0.0) {
        return Err(Error::invalid(format!("prox step must be non-negative, got {t}")));
    }
    u_tilde.ensure_same_dims(v)?;
    Ok(prox_quadratic_unchecked(u_tilde, t, v))
}

/// `((u_tilde - t) + sqrt((u_tilde - t)^2 + 4 t obs)) / 2`: the proximal map
/// of `t sum (u - obs log u)`. Positive wherever `obs > 0`.
pub fn prox_idiv(u_tilde: &Image, t: f64, obs: &Image) -> Result<Image> {
    if !(t >= 0.0) {
        return Err(Error::invalid(format!("prox step must be non-negative, got {t}")));
    }
    u_tilde.ensure_same_dims(obs)?;
    if obs.data().iter().any(|&f| f < 0.0) {
        return Err(Error::invalid("I-divergence observation must be non-negative"));
    }
    Ok(prox_idiv_unchecked(u_tilde, t, obs))
}

fn aborted(iteration: usize, reason: String, trace: SolverTrace) -> Error {
    Error::SolverAborted {
        iteration,
        reason,
        trace: Box::new(trace),
    }
}

pub fn ipiano_minimize<F, G>(smooth: &F, prox: &G, u0: &Image, cfg: &SolverConfig) -> Result<SolverOutcome>
where
    F: SmoothTerm + ?Sized,
    G: ProxTerm + ?Sized,
{
    cfg.validate()?;
    let mut trace = SolverTrace::default();
    let mut u = u0.clone();
    let mut u_prev = u0.clone();
    let (mut f, mut grad) = smooth.energy_and_gradient(&u);
    if !f.is_finite() || !grad.is_finite() {
        return Err(aborted(0, format!("non-finite smooth energy {f} at the start point"), trace));
    }
    let mut lipschitz = cfg.lipschitz_init;
    let mut stop = StopReason::MaxIterations;

    for iteration in 0..cfg.max_iters {
        let mut backtracks = 0;
        let accepted = loop {
            let tau = cfg.step_scale * (1.0 - cfg.gamma) / lipschitz;
            let mut u_tilde = u.clone();
            for ((t, &gr), (&a, &b)) in u_tilde
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(u.data().iter().zip(u_prev.data()))
            {
                *t = a - tau * gr + cfg.gamma * (a - b);
            }
            let u_new = prox.prox(&u_tilde, tau);
            let mut linear = 0.0;
            let mut step_sq = 0.0;
            for ((&n, &o), &gr) in u_new.data().iter().zip(u.data()).zip(grad.data()) {
                let d = n - o;
                linear += gr * d;
                step_sq += d * d;
            }
            let (f_new, grad_new) = smooth.energy_and_gradient(&u_new);
            if f_new.is_finite() && f_new <= f + linear + 0.5 * lipschitz * step_sq {
                break Some((u_new, f_new, grad_new, tau, linear, step_sq.sqrt()));
            }
            backtracks += 1;
            if backtracks > cfg.max_backtracks {
                break None;
            }
            lipschitz *= cfg.backtrack_factor;
        };
        let Some((u_new, f_new, grad_new, tau, linear, step_norm)) = accepted else {
            log::debug!("ipiano: backtracking limit reached at iteration {iteration}");
            stop = StopReason::BacktrackLimit;
            break;
        };
        if !grad_new.is_finite() {
            return Err(aborted(iteration, "non-finite gradient".into(), trace));
        }
        let g_new = prox.energy(&u_new);
        if !g_new.is_finite() {
            return Err(aborted(iteration, format!("non-finite data energy {g_new}"), trace));
        }
        trace.records.push(IterationRecord {
            iteration,
            f: f_new,
            g: g_new,
            f_prev: f,
            linear,
            lipschitz,
            tau,
            step_norm,
            backtracks,
        });
        let u_norm = u.norm();
        u_prev = std::mem::replace(&mut u, u_new);
        f = f_new;
        grad = grad_new;
        lipschitz /= cfg.lipschitz_relax;
        if step_norm <= cfg.rel_tol * u_norm {
            stop = StopReason::Converged;
            break;
        }
    }
    Ok(SolverOutcome {
        solution: u,
        trace,
        stop,
    })
}
