//! Loss-specific (bilevel) training of FoE filters.
//!
//! The lower level denoises each training sample with the current filters;
//! the upper level measures the reconstruction loss against the clean
//! image. Gradients of that loss with respect to the filter coefficients
//! and log-weights come from implicit differentiation of the lower-level
//! optimality condition: with `H` the Hessian of the lower energy at its
//! minimizer `w` and `q = H^{-1} dloss/dw`,
//!
//! ```text
//! dL/dbeta_ij = -e^{a_i} ( <rho'(K_i w), B_j q> + <rho''(K_i w) K_i q, B_j w> )
//! dL/da_i     = -e^{a_i} <rho'(K_i w), K_i q>
//! ```

pub mod cg;
pub mod lbfgs;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{compose_filter, FilterBasis};
use crate::error::{Error, Result};
use crate::foe::{rho_prime, rho_second, DomainTag, FoEModel, FoePrior};
use crate::image::{BoundaryRule, Image, Kernel};
use crate::noise::sample_poisson;
use crate::solver::{ipiano_minimize, IDivergenceData, QuadraticData, SolverConfig};
use crate::vst::{anscombe_forward, inverse_unbiased, inverse_unbiased_derivative};

use cg::conjugate_gradient;
use lbfgs::{lbfgs_step, LbfgsConfig, LbfgsState, StepResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Objective {
    /// Lower level `E_FoE(x) + lambda <x - f log x, 1>`, loss `1/2 |x - g|^2`.
    OriginalDomain,
    /// Lower level `E_FoE(u) + 1/2 |u - v|^2` on `v = anscombe(f)`, loss
    /// `1/2 |I_C(u) - g|^2` with `I_C` the unbiased inverse.
    AnscombeDomain,
}

impl Objective {
    pub fn domain(self) -> DomainTag {
        match self {
            Objective::OriginalDomain => DomainTag::Original,
            Objective::AnscombeDomain => DomainTag::Anscombe,
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::OriginalDomain => "original",
            Objective::AnscombeDomain => "anscombe",
        })
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" | "original_domain" => Ok(Objective::OriginalDomain),
            "anscombe" | "anscombe_domain" => Ok(Objective::AnscombeDomain),
            other => Err(Error::invalid(format!("unknown objective '{other}'"))),
        }
    }
}

/// A clean image with one Poisson observation of it.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    /// Peak-scaled ground truth.
    pub clean: Image,
    /// Integer counts.
    pub noisy: Image,
    /// Anscombe transform of `noisy`.
    pub transformed: Image,
}

impl TrainingSample {
    pub fn new(clean: Image, noisy: Image) -> Result<Self> {
        clean.ensure_same_dims(&noisy)?;
        if noisy.data().iter().any(|&v| !(v >= 0.0 && v.fract() == 0.0)) {
            return Err(Error::invalid("noisy training image must hold non-negative integer counts"));
        }
        let transformed = anscombe_forward(&noisy)?;
        Ok(Self {
            clean,
            noisy,
            transformed,
        })
    }

    /// Draws the observation from `clean` with the given seed.
    pub fn simulate(clean: Image, seed: u64) -> Result<Self> {
        let noisy = sample_poisson(&clean, seed)?;
        Self::new(clean, noisy)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub objective: Objective,
    /// Data-term weight of the original-domain lower problem.
    pub data_lambda: f64,
    /// Zero counts are replaced by this in the original-domain lower problem.
    pub zero_offset_c: f64,
    pub lbfgs: LbfgsConfig,
    pub max_outer_iters: usize,
    pub rel_loss_tol: f64,
    pub lower_solver: SolverConfig,
    /// Newton-CG refinements after the first-order lower solve.
    pub newton_steps: usize,
    /// Refinement stops once the lower gradient's largest entry is below this.
    pub stationarity_target: f64,
    /// Samples whose lower gradient exceeds this are not differentiated.
    pub stationarity_tol: f64,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    /// Start each lower solve from the sample's previous minimizer.
    pub warm_start: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::AnscombeDomain,
            data_lambda: 1.0,
            zero_offset_c: 0.1,
            lbfgs: LbfgsConfig::default(),
            max_outer_iters: 500,
            rel_loss_tol: 1e-5,
            lower_solver: SolverConfig {
                max_iters: 1000,
                rel_tol: 1e-8,
                ..SolverConfig::default()
            },
            newton_steps: 30,
            stationarity_target: 1e-9,
            stationarity_tol: 1e-4,
            cg_tol: 1e-8,
            cg_max_iters: 1000,
            warm_start: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.lower_solver.validate()?;
        if !(self.data_lambda > 0.0) {
            return Err(Error::invalid("data_lambda must be positive"));
        }
        if self.objective == Objective::OriginalDomain && !(self.zero_offset_c > 0.0) {
            return Err(Error::invalid(
                "original-domain training needs zero_offset_c > 0 to keep the lower problem smooth",
            ));
        }
        for (name, v) in [
            ("rel_loss_tol", self.rel_loss_tol),
            ("stationarity_target", self.stationarity_target),
            ("stationarity_tol", self.stationarity_tol),
            ("cg_tol", self.cg_tol),
        ] {
            if !(v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.lbfgs.memory == 0 {
            return Err(Error::invalid("lbfgs memory must be at least 1"));
        }
        Ok(())
    }
}

/// The lower-level energy of one sample for fixed filters.
#[derive(Clone, Debug)]
pub struct LowerProblem {
    prior: FoePrior,
    objective: Objective,
    /// `v` (Anscombe domain) or `f` with zeros replaced (original domain).
    obs: Image,
    lambda: f64,
}

/// Second-order information of a [`LowerProblem`] frozen at one point.
#[derive(Clone, Debug)]
pub struct HessianOperator<'a> {
    problem: &'a LowerProblem,
    /// `e^{a_i} rho''(K_i w)` per filter.
    curvature: Vec<Image>,
    /// Diagonal of the data-term Hessian.
    data_diag: Image,
}

impl HessianOperator<'_> {
    pub fn apply(&self, p: &Image) -> Image {
        let prior = &self.problem.prior;
        let padded = prior.pad(p);
        let mut acc = prior.adjoint_accumulator(p);
        let mut kp = Image::zeros(p.width(), p.height());
        for (k, c) in prior.kernels().iter().zip(&self.curvature) {
            padded.convolve_into(k, &mut kp);
            for (v, &cv) in kp.data_mut().iter_mut().zip(c.data()) {
                *v *= cv;
            }
            acc.add(&kp, k);
        }
        let mut out = acc.finish();
        for ((o, &d), &pv) in out.data_mut().iter_mut().zip(self.data_diag.data()).zip(p.data()) {
            *o += d * pv;
        }
        out
    }

    /// Approximate trace, exact away from the border.
    pub fn trace_estimate(&self) -> f64 {
        let prior = &self.problem.prior;
        let filters: f64 = prior
            .kernels()
            .iter()
            .zip(&self.curvature)
            .map(|(k, c)| k.norm().powi(2) * c.sum())
            .sum();
        filters + self.data_diag.sum()
    }
}

impl LowerProblem {
    pub fn new(prior: FoePrior, sample: &TrainingSample, objective: Objective, cfg: &TrainConfig) -> Self {
        let (obs, lambda) = match objective {
            Objective::AnscombeDomain => (sample.transformed.clone(), 1.0),
            Objective::OriginalDomain => {
                let c = cfg.zero_offset_c;
                (sample.noisy.map(|v| if v == 0.0 { c } else { v }), cfg.data_lambda)
            }
        };
        Self {
            prior,
            objective,
            obs,
            lambda,
        }
    }

    pub fn prior(&self) -> &FoePrior {
        &self.prior
    }

    pub fn observation(&self) -> &Image {
        &self.obs
    }

    fn data_energy(&self, w: &Image) -> f64 {
        match self.objective {
            Objective::AnscombeDomain => {
                0.5 * self.lambda * w.data().iter().zip(self.obs.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            }
            Objective::OriginalDomain => {
                let mut e = 0.0;
                for (&x, &f) in w.data().iter().zip(self.obs.data()) {
                    if x <= 0.0 {
                        return f64::INFINITY;
                    }
                    e += x - f * x.ln();
                }
                self.lambda * e
            }
        }
    }

    fn add_data_gradient(&self, w: &Image, grad: &mut Image) {
        let l = self.lambda;
        for ((g, &x), &f) in grad.data_mut().iter_mut().zip(w.data()).zip(self.obs.data()) {
            *g += match self.objective {
                Objective::AnscombeDomain => l * (x - f),
                Objective::OriginalDomain => l * (1.0 - f / x),
            };
        }
    }

    pub fn energy(&self, w: &Image) -> f64 {
        self.prior.energy(w) + self.data_energy(w)
    }

    pub fn energy_and_gradient(&self, w: &Image) -> (f64, Image) {
        let (e, mut g) = self.prior.energy_and_gradient(w);
        self.add_data_gradient(w, &mut g);
        (e + self.data_energy(w), g)
    }

    pub fn gradient(&self, w: &Image) -> Image {
        self.energy_and_gradient(w).1
    }

    pub fn hessian_at(&self, w: &Image) -> HessianOperator<'_> {
        let padded = self.prior.pad(w);
        let curvature = self
            .prior
            .kernels()
            .iter()
            .zip(self.prior.weights())
            .map(|(k, &a)| padded.convolve(k).map(|z| a * rho_second(z)))
            .collect();
        let l = self.lambda;
        let data_diag = match self.objective {
            Objective::AnscombeDomain => Image::filled(w.width(), w.height(), l),
            Objective::OriginalDomain => w.zip_map(&self.obs, |x, f| l * f / (x * x)),
        };
        HessianOperator {
            problem: self,
            curvature,
            data_diag,
        }
    }

    /// `H(w) p` without forming `H`.
    pub fn hessian_apply(&self, w: &Image, p: &Image) -> Image {
        self.hessian_at(w).apply(p)
    }

    /// Solves `H(w) q = rhs` by CG. On non-positive curvature the system is
    /// shifted by `eps I`, `eps = 1e-6 trace(H) / N`, growing until CG runs
    /// through.
    pub fn solve_hessian_system(&self, w: &Image, rhs: &Image, tol: f64, max_iters: usize) -> Result<Image> {
        let h = self.hessian_at(w);
        let out = conjugate_gradient(|p| h.apply(p), rhs, tol, max_iters);
        if !out.breakdown {
            if out.rel_residual > tol {
                log::warn!(
                    "Hessian solve stopped at relative residual {:.2e} after {} iterations",
                    out.rel_residual,
                    out.iterations
                );
            }
            return Ok(out.solution);
        }
        let mut eps = 1e-6 * (h.trace_estimate().abs() / w.len() as f64).max(f64::MIN_POSITIVE);
        for _ in 0..8 {
            log::warn!("Hessian not positive definite; regularizing with eps = {eps:.3e}");
            let shifted = conjugate_gradient(
                |p| {
                    let mut r = h.apply(p);
                    r.axpy(eps, p);
                    r
                },
                rhs,
                tol,
                max_iters,
            );
            if !shifted.breakdown {
                return Ok(shifted.solution);
            }
            eps *= 100.0;
        }
        Err(Error::Numerical("Hessian system stayed indefinite after regularization".into()))
    }

    /// Minimizes the lower energy from `start`: iPiano, then Newton-CG steps
    /// until the gradient's sup-norm reaches `cfg.stationarity_target`.
    pub fn solve(&self, start: &Image, cfg: &TrainConfig) -> Result<Image> {
        let out = match self.objective {
            Objective::AnscombeDomain => ipiano_minimize(
                &self.prior,
                &QuadraticData {
                    target: &self.obs,
                    lambda: self.lambda,
                },
                start,
                &cfg.lower_solver,
            )?,
            Objective::OriginalDomain => {
                let start = start.map(|v| v.max(1e-3));
                ipiano_minimize(
                    &self.prior,
                    &IDivergenceData {
                        obs: &self.obs,
                        lambda: self.lambda,
                    },
                    &start,
                    &cfg.lower_solver,
                )?
            }
        };
        Ok(self.refine(out.solution, cfg))
    }

    /// Newton steps on `H + mu I`. The shift grows while CG meets negative
    /// curvature and shrinks after each accepted step, so saddle regions of
    /// the nonconvex energy are left along damped directions.
    fn refine(&self, mut w: Image, cfg: &TrainConfig) -> Image {
        let (mut e, mut g) = self.energy_and_gradient(&w);
        let mut shift = 0.0;
        for _ in 0..cfg.newton_steps {
            let g_sup = g.max_abs();
            if g_sup <= cfg.stationarity_target {
                break;
            }
            let h = self.hessian_at(&w);
            let n = w.len() as f64;
            let unit = (h.trace_estimate().abs() / n)
                .max(h.data_diag.sum() / n)
                .max(f64::MIN_POSITIVE);
            let neg_g = g.scaled(-1.0);
            let mut dir = None;
            for _ in 0..16 {
                let cg = conjugate_gradient(
                    |p| {
                        let mut r = h.apply(p);
                        if shift > 0.0 {
                            r.axpy(shift, p);
                        }
                        r
                    },
                    &neg_g,
                    1e-3f64.min(g_sup),
                    cfg.cg_max_iters,
                );
                if !cg.breakdown {
                    dir = Some(cg.solution);
                    break;
                }
                shift = if shift == 0.0 { 1e-4 * unit } else { shift * 10.0 };
            }
            log::trace!("newton: e {e:.12e} g_sup {g_sup:.3e} shift {shift:.2e}");
            let dir = dir.unwrap_or_else(|| neg_g.clone());
            let mut t = 1.0;
            if self.objective == Objective::OriginalDomain {
                // stay strictly inside x > 0
                for (&x, &d) in w.data().iter().zip(dir.data()) {
                    if d < 0.0 {
                        t = f64::min(t, -0.99 * x / d);
                    }
                }
            }
            let g_norm = g.norm();
            let mut accepted = false;
            for _ in 0..30 {
                let mut trial = w.clone();
                trial.axpy(t, &dir);
                let (e_new, g_new) = self.energy_and_gradient(&trial);
                let decreases = e_new <= e + 1e-4 * t * g.dot(&dir);
                let flat = e_new <= e + 1e-12 * e.abs().max(1.0) && g_new.norm() < g_norm;
                if e_new.is_finite() && (decreases || flat) {
                    w = trial;
                    e = e_new;
                    g = g_new;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                log::debug!("Newton polish stalled at gradient sup-norm {g_sup:.3e}");
                break;
            }
            if t == 1.0 {
                shift *= 0.1;
                if shift < 1e-8 * unit {
                    shift = 0.0;
                }
            } else {
                shift = if shift == 0.0 { 1e-4 * unit } else { shift * 10.0 };
            }
        }
        log::debug!("Newton polish ended at gradient sup-norm {:.3e}", g.max_abs());
        w
    }

    /// Reconstruction loss and its gradient with respect to `w`.
    pub fn loss(&self, w: &Image, clean: &Image) -> (f64, Image) {
        match self.objective {
            Objective::OriginalDomain => {
                let d = w.zip_map(clean, |a, b| a - b);
                (0.5 * d.norm_sq(), d)
            }
            Objective::AnscombeDomain => {
                let mut loss = 0.0;
                let mut grad = Image::zeros(w.width(), w.height());
                for ((d, &u), &gv) in grad.data_mut().iter_mut().zip(w.data()).zip(clean.data()) {
                    let r = inverse_unbiased(u) - gv;
                    loss += 0.5 * r * r;
                    *d = inverse_unbiased_derivative(u) * r;
                }
                (loss, grad)
            }
        }
    }
}

/// Filter coefficients and log-weights flattened into one vector: the
/// coefficients of filter 0, filter 1, ..., then all log-weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub betas: Vec<Vec<f64>>,
    pub log_weights: Vec<f64>,
}

impl Params {
    pub fn from_model(model: &FoEModel) -> Self {
        Self {
            betas: model.betas().to_vec(),
            log_weights: model.weights().iter().map(|w| w.ln()).collect(),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.betas.iter().flatten().copied().collect();
        v.extend(&self.log_weights);
        v
    }

    pub fn from_slice(theta: &[f64], n_filters: usize, n_basis: usize) -> Result<Self> {
        if theta.len() != n_filters * (n_basis + 1) {
            return Err(Error::dims(n_filters * (n_basis + 1), theta.len()));
        }
        let betas = theta[..n_filters * n_basis].chunks(n_basis).map(<[f64]>::to_vec).collect();
        Ok(Self {
            betas,
            log_weights: theta[n_filters * n_basis..].to_vec(),
        })
    }

    pub fn kernels(&self, basis: &FilterBasis) -> Result<Vec<Kernel>> {
        self.betas.iter().map(|b| compose_filter(basis, b)).collect()
    }

    pub fn prior(&self, basis: &FilterBasis, boundary: BoundaryRule) -> Result<FoePrior> {
        let weights = self.log_weights.iter().map(|a| a.exp()).collect();
        Ok(FoePrior::new(self.kernels(basis)?, weights, boundary))
    }

    pub fn into_model(self, basis: &FilterBasis, domain: DomainTag, boundary: BoundaryRule) -> Result<FoEModel> {
        let weights = self.log_weights.iter().map(|a| a.exp()).collect();
        FoEModel::new(basis.clone(), self.betas, weights, domain, boundary)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamGradients {
    pub loss: f64,
    pub betas: Vec<Vec<f64>>,
    pub log_weights: Vec<f64>,
}

impl ParamGradients {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.betas.iter().flatten().copied().collect();
        v.extend(&self.log_weights);
        v
    }
}

/// Loss of one sample and its gradient with respect to all coefficients
/// and log-weights, at a verified lower-level minimizer `w_star`.
pub fn param_gradients(
    problem: &LowerProblem,
    basis: &FilterBasis,
    w_star: &Image,
    clean: &Image,
    cfg: &TrainConfig,
) -> Result<ParamGradients> {
    let stationarity = problem.gradient(w_star).max_abs();
    if !(stationarity <= cfg.stationarity_tol) {
        return Err(Error::Numerical(format!(
            "lower-level point is not stationary: gradient sup-norm {stationarity:.3e} > {:.1e}",
            cfg.stationarity_tol
        )));
    }
    let (loss, dl_dw) = problem.loss(w_star, clean);
    let q = problem.solve_hessian_system(w_star, &dl_dw, cfg.cg_tol, cfg.cg_max_iters)?;
    let prior = problem.prior();
    let m = basis.atom_size();
    let pad_w = prior.pad(w_star);
    let pad_q = prior.pad(&q);
    let mut betas = Vec::with_capacity(prior.kernels().len());
    let mut log_weights = Vec::with_capacity(prior.kernels().len());
    for (k, &a) in prior.kernels().iter().zip(prior.weights()) {
        let z = pad_w.convolve(k);
        let kq = pad_q.convolve(k);
        let slope = z.map(rho_prime);
        let curv_kq = z.zip_map(&kq, |zv, kv| rho_second(zv) * kv);
        log_weights.push(-a * slope.dot(&kq));
        let g1 = pad_q.kernel_gradient(&slope, m);
        let g2 = pad_w.kernel_gradient(&curv_kq, m);
        let taps: Vec<f64> = g1.iter().zip(&g2).map(|(x, y)| -a * (x + y)).collect();
        betas.push(basis.project(&Kernel::new(m, taps)?)?);
    }
    Ok(ParamGradients {
        loss,
        betas,
        log_weights,
    })
}

/// Everything needed to continue training: optimizer state, loss history
/// and the per-sample warm starts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub optimizer: LbfgsState,
    pub loss_history: Vec<f64>,
    pub warm_starts: Vec<Vec<f64>>,
    pub stop: Option<TrainStop>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainStop {
    RelativeLossChange,
    MaxIterations,
    LineSearchFailure,
}

pub struct Trainer<'a> {
    samples: &'a [TrainingSample],
    basis: FilterBasis,
    boundary: BoundaryRule,
    n_filters: usize,
    cfg: TrainConfig,
}

impl<'a> Trainer<'a> {
    pub fn new(samples: &'a [TrainingSample], init: &FoEModel, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if samples.is_empty() {
            return Err(Error::invalid("training needs at least one sample"));
        }
        if init.domain() != cfg.objective.domain() {
            return Err(Error::invalid(format!(
                "{} objective needs a {} model, got {}",
                cfg.objective,
                cfg.objective.domain(),
                init.domain()
            )));
        }
        let m = init.filter_size();
        for s in samples {
            if s.clean.width() < m || s.clean.height() < m {
                return Err(Error::dims(format!("samples at least {m}x{m}"), format!("{}x{}", s.clean.width(), s.clean.height())));
            }
        }
        Ok(Self {
            samples,
            basis: init.basis().clone(),
            boundary: init.boundary(),
            n_filters: init.num_filters(),
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn params(&self, theta: &[f64]) -> Result<Params> {
        Params::from_slice(theta, self.n_filters, self.basis.len())
    }

    pub fn model(&self, theta: &[f64]) -> Result<FoEModel> {
        self.params(theta)?.into_model(&self.basis, self.cfg.objective.domain(), self.boundary)
    }

    fn initial_guess(&self, s: &TrainingSample) -> Image {
        match self.cfg.objective {
            Objective::AnscombeDomain => s.transformed.clone(),
            Objective::OriginalDomain => s.noisy.map(|v| if v == 0.0 { self.cfg.zero_offset_c } else { v }),
        }
    }

    fn starts(&self, warm: &[Vec<f64>]) -> Vec<Image> {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| match warm.get(i) {
                Some(d) if self.cfg.warm_start && d.len() == s.clean.len() => {
                    Image::new(s.clean.width(), s.clean.height(), d.clone()).unwrap_or_else(|_| self.initial_guess(s))
                }
                _ => self.initial_guess(s),
            })
            .collect()
    }

    /// Summed loss and gradient at `theta`. Returns the lower-level
    /// minimizers for warm starts. Samples whose lower problem fails are
    /// skipped with a warning.
    pub fn evaluate(&self, theta: &[f64], warm: &[Vec<f64>]) -> Result<(f64, Vec<f64>, Vec<Vec<f64>>)> {
        let params = self.params(theta)?;
        let prior = params.prior(&self.basis, self.boundary)?;
        let starts = self.starts(warm);
        let per_sample: Vec<Result<(ParamGradients, Image)>> = self
            .samples
            .par_iter()
            .zip(starts.par_iter())
            .map(|(s, start)| {
                let problem = LowerProblem::new(prior.clone(), s, self.cfg.objective, &self.cfg);
                let w = problem.solve(start, &self.cfg)?;
                let g = param_gradients(&problem, &self.basis, &w, &s.clean, &self.cfg)?;
                Ok((g, w))
            })
            .collect();
        let mut loss = 0.0;
        let mut grad = vec![0.0; theta.len()];
        let mut used = 0;
        let mut minimizers = Vec::with_capacity(self.samples.len());
        for (i, r) in per_sample.into_iter().enumerate() {
            match r {
                Ok((g, w)) => {
                    loss += g.loss;
                    for (acc, v) in grad.iter_mut().zip(g.to_vec()) {
                        *acc += v;
                    }
                    used += 1;
                    minimizers.push(w.into_data());
                }
                Err(e) => {
                    log::warn!("sample {i} skipped: {e}");
                    minimizers.push(starts[i].data().to_vec());
                }
            }
        }
        if used == 0 {
            return Err(Error::Numerical("every training sample was skipped".into()));
        }
        Ok((loss, grad, minimizers))
    }

    pub fn init_state(&self, init: &FoEModel) -> Result<TrainState> {
        let theta = Params::from_model(init).to_vec();
        let (f, g, warm) = self.evaluate(&theta, &[])?;
        Ok(TrainState {
            optimizer: LbfgsState::new(theta, f, g),
            loss_history: vec![f],
            warm_starts: warm,
            stop: None,
        })
    }

    /// Runs outer iterations until a stopping rule fires or
    /// `max_outer_iters` in total have been taken. `on_iteration` sees the
    /// state after every accepted step.
    pub fn run(&self, state: &mut TrainState, on_iteration: &mut dyn FnMut(&TrainState)) -> Result<TrainStop> {
        if let Some(stop) = state.stop {
            return Ok(stop);
        }
        while state.optimizer.iteration < self.cfg.max_outer_iters {
            let mut warm = state.warm_starts.clone();
            let mut eval = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
                let (f, g, w) = self.evaluate(theta, &warm)?;
                warm = w;
                Ok((f, g))
            };
            let result = lbfgs_step(&mut state.optimizer, &self.cfg.lbfgs, &mut eval);
            match result {
                StepResult::LineSearchFailed => {
                    log::info!("training stopped: no feasible step");
                    state.stop = Some(TrainStop::LineSearchFailure);
                    on_iteration(state);
                    return Ok(TrainStop::LineSearchFailure);
                }
                StepResult::Accepted { f_old, f_new, step, trials } => {
                    state.warm_starts = warm;
                    state.loss_history.push(f_new);
                    log::info!(
                        "outer iteration {}: loss {f_new:.6e} (step {step:.3e}, {trials} trial(s))",
                        state.optimizer.iteration
                    );
                    let rel = (f_old - f_new).abs() / f_old.abs().max(f64::MIN_POSITIVE);
                    if rel < self.cfg.rel_loss_tol {
                        state.stop = Some(TrainStop::RelativeLossChange);
                        on_iteration(state);
                        return Ok(TrainStop::RelativeLossChange);
                    }
                    on_iteration(state);
                }
            }
        }
        state.stop = Some(TrainStop::MaxIterations);
        Ok(TrainStop::MaxIterations)
    }
}

/// Trains `init` on `samples`. With `max_outer_iters == 0` the initial model
/// is returned unchanged.
pub fn train(samples: &[TrainingSample], init: &FoEModel, cfg: &TrainConfig) -> Result<FoEModel> {
    let trainer = Trainer::new(samples, init, cfg.clone())?;
    if cfg.max_outer_iters == 0 {
        return Ok(init.clone());
    }
    let mut state = trainer.init_state(init)?;
    trainer.run(&mut state, &mut |_| {})?;
    if state.optimizer.iteration == 0 {
        return Ok(init.clone());
    }
    trainer.model(&state.optimizer.x)
}
