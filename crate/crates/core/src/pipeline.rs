//! End-to-end denoisers.
//!
//! * `Direct`: FoE prior plus I-divergence on the raw counts.
//! * `Transform`: Anscombe transform, FoE prior plus a data term chosen by
//!   peak (quadratic at peak 5 and above, I-divergence below), then the
//!   unbiased inverse.
//! * `TransformBinned`: 3x3 binning, `Transform` at nine times the peak,
//!   then bilinear upscaling.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::foe::{DomainTag, FoEModel};
use crate::image::Image;
use crate::lambda_table::{LambdaKey, LambdaTable};
use crate::noise::{bin3, unbin_bilinear, BIN_AREA};
use crate::solver::{ipiano_minimize, IDivergenceData, QuadraticData, SolverConfig, SolverTrace, StopReason};
use crate::vst::{anscombe_forward, anscombe_inverse_exact_unbiased};

/// Peaks at or above this use the quadratic data term.
pub const BRANCH_THRESHOLD: f64 = 5.0;

/// Replacement for zero counts in the direct model.
pub const DEFAULT_ZERO_OFFSET: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Direct,
    Transform,
    TransformBinned,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Direct => "direct",
            Variant::Transform => "transform",
            Variant::TransformBinned => "transform_binned",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Variant::Direct),
            "transform" => Ok(Variant::Transform),
            "transform_binned" | "binned" => Ok(Variant::TransformBinned),
            other => Err(Error::invalid(format!("unknown variant '{other}'"))),
        }
    }
}

impl Variant {
    pub fn required_domain(self) -> DomainTag {
        match self {
            Variant::Direct => DomainTag::Original,
            Variant::Transform | Variant::TransformBinned => DomainTag::Anscombe,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DataTerm {
    Quadratic,
    IDivergence,
}

impl fmt::Display for DataTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataTerm::Quadratic => "quadratic",
            DataTerm::IDivergence => "idiv",
        })
    }
}

/// Data term of the transform-domain model at a given peak.
pub fn select_branch(peak: f64) -> DataTerm {
    if peak >= BRANCH_THRESHOLD {
        DataTerm::Quadratic
    } else {
        DataTerm::IDivergence
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Lambda {
    /// Look the weight up in the calibration table.
    Auto,
    Fixed(f64),
}

fn lambda_key(variant: Variant, branch: DataTerm) -> LambdaKey {
    match (variant, branch) {
        (Variant::Direct, _) => LambdaKey::Direct,
        (_, DataTerm::Quadratic) => LambdaKey::Quadratic,
        (_, DataTerm::IDivergence) => LambdaKey::IDivergence,
    }
}

/// Data-term weight from the bundled calibration table. For the binned
/// variant pass the binned peak.
pub fn select_lambda(peak: f64, variant: Variant) -> Result<f64> {
    select_lambda_from(&LambdaTable::builtin(), peak, variant)
}

pub fn select_lambda_from(table: &LambdaTable, peak: f64, variant: Variant) -> Result<f64> {
    select_lambda_for_branch(table, peak, variant, select_branch(peak))
}

/// Table lookup for an explicitly chosen transform-domain data term.
pub fn select_lambda_for_branch(table: &LambdaTable, peak: f64, variant: Variant, branch: DataTerm) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::invalid(format!("peak must be positive, got {peak}")));
    }
    let key = lambda_key(variant, branch);
    table
        .lookup(key, peak)
        .ok_or_else(|| Error::invalid(format!("lambda table has no '{key}' entries")))
}

#[derive(Clone, Debug)]
pub struct DenoiseRequest<'a> {
    /// Non-negative integer counts.
    pub noisy: &'a Image,
    pub peak: f64,
    pub model: &'a FoEModel,
    pub lambda: Lambda,
    pub variant: Variant,
    /// Zero counts are replaced by this before the direct model is solved.
    pub zero_offset_c: f64,
    /// 1 or 3; only read by the binned variant.
    pub bin_factor: usize,
    /// Defaults to [`SolverConfig::for_peak`] at the peak that selects the branch.
    pub solver: Option<SolverConfig>,
    /// Defaults to [`LambdaTable::builtin`].
    pub lambda_table: Option<&'a LambdaTable>,
    /// Forces the transform-domain data term instead of picking it by peak.
    pub branch: Option<DataTerm>,
}

impl<'a> DenoiseRequest<'a> {
    pub fn new(noisy: &'a Image, peak: f64, model: &'a FoEModel, variant: Variant) -> Self {
        Self {
            noisy,
            peak,
            model,
            lambda: Lambda::Auto,
            variant,
            zero_offset_c: DEFAULT_ZERO_OFFSET,
            bin_factor: if variant == Variant::TransformBinned { 3 } else { 1 },
            solver: None,
            lambda_table: None,
            branch: None,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = Lambda::Fixed(lambda);
        self
    }

    pub fn with_solver(mut self, cfg: SolverConfig) -> Self {
        self.solver = Some(cfg);
        self
    }

    pub fn with_zero_offset(mut self, c: f64) -> Self {
        self.zero_offset_c = c;
        self
    }

    pub fn with_bin_factor(mut self, factor: usize) -> Self {
        self.bin_factor = factor;
        self
    }

    pub fn with_lambda_table(mut self, table: &'a LambdaTable) -> Self {
        self.lambda_table = Some(table);
        self
    }

    pub fn with_branch(mut self, branch: DataTerm) -> Self {
        self.branch = Some(branch);
        self
    }

    fn branch_at(&self, peak: f64) -> DataTerm {
        self.branch.unwrap_or_else(|| select_branch(peak))
    }

    fn validate(&self) -> Result<()> {
        if !(self.peak > 0.0 && self.peak.is_finite()) {
            return Err(Error::invalid(format!("peak must be positive, got {}", self.peak)));
        }
        if let Lambda::Fixed(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::invalid(format!("lambda must be positive, got {l}")));
            }
        }
        if !(self.zero_offset_c >= 0.0) {
            return Err(Error::invalid("zero offset c must be non-negative"));
        }
        if self.bin_factor != 1 && self.bin_factor != 3 {
            return Err(Error::invalid(format!("bin factor must be 1 or 3, got {}", self.bin_factor)));
        }
        let need = self.variant.required_domain();
        if self.model.domain() != need {
            return Err(Error::invalid(format!(
                "the {} variant needs a model trained in the {need} domain, got {}",
                self.variant,
                self.model.domain()
            )));
        }
        if self.noisy.data().iter().any(|&v| !(v >= 0.0 && v.fract() == 0.0)) {
            return Err(Error::invalid("noisy input must hold non-negative integer counts"));
        }
        Ok(())
    }

    fn resolve_lambda(&self, peak: f64) -> Result<f64> {
        match self.lambda {
            Lambda::Fixed(l) => Ok(l),
            Lambda::Auto => {
                let branch = self.branch_at(peak);
                match self.lambda_table {
                    Some(t) => select_lambda_for_branch(t, peak, self.variant, branch),
                    None => select_lambda_for_branch(&LambdaTable::builtin(), peak, self.variant, branch),
                }
            }
        }
    }

    fn solver_config(&self, peak: f64) -> SolverConfig {
        self.solver.clone().unwrap_or_else(|| SolverConfig::for_peak(peak))
    }
}

#[derive(Clone, Debug)]
pub struct DenoiseOutput {
    /// Estimated intensities, non-negative, same dims as the input.
    pub image: Image,
    pub variant: Variant,
    /// Transform-domain data term; `None` for the direct model.
    pub branch: Option<DataTerm>,
    pub lambda: f64,
    /// Peak that selected the branch (the binned peak for the binned variant).
    pub effective_peak: f64,
    /// Minimized image before any inverse transform or upscaling.
    pub minimizer: Image,
    pub trace: SolverTrace,
    pub stop: StopReason,
    /// Values below the inverse transform's domain that were clamped.
    pub clamped: usize,
}

pub fn denoise(req: &DenoiseRequest<'_>) -> Result<DenoiseOutput> {
    match req.variant {
        Variant::Direct => denoise_direct(req),
        Variant::Transform => denoise_transform(req),
        Variant::TransformBinned => denoise_binned(req),
    }
}

/// Minimizes `E_FoE(x) + lambda sum (x - y' log x)` where `y'` is the input
/// with zero counts replaced by `c`.
pub fn denoise_direct(req: &DenoiseRequest<'_>) -> Result<DenoiseOutput> {
    expect_variant(req, Variant::Direct)?;
    req.validate()?;
    let lambda = req.resolve_lambda(req.peak)?;
    let c = req.zero_offset_c;
    let obs = req.noisy.map(|v| if v == 0.0 { c } else { v });
    let prior = req.model.prior();
    prior.check_dims(&obs)?;
    let data = IDivergenceData { obs: &obs, lambda };
    let cfg = req.solver_config(req.peak);
    let out = ipiano_minimize(&prior, &data, &obs, &cfg)?;
    log::info!("direct model: lambda {lambda}, c {c}, {} iterations", out.trace.len());
    Ok(DenoiseOutput {
        image: out.solution.map(|v| v.max(0.0)),
        variant: Variant::Direct,
        branch: None,
        lambda,
        effective_peak: req.peak,
        minimizer: out.solution,
        trace: out.trace,
        stop: out.stop,
        clamped: 0,
    })
}

/// Anscombe transform, FoE-regularized estimate with the peak-selected data
/// term, unbiased inverse.
pub fn denoise_transform(req: &DenoiseRequest<'_>) -> Result<DenoiseOutput> {
    expect_variant(req, Variant::Transform)?;
    req.validate()?;
    transform_at_peak(req, req.noisy, req.peak, Variant::Transform)
}

fn transform_at_peak(req: &DenoiseRequest<'_>, noisy: &Image, peak: f64, variant: Variant) -> Result<DenoiseOutput> {
    let lambda = req.resolve_lambda(peak)?;
    let branch = req.branch_at(peak);
    let v = anscombe_forward(noisy)?;
    let prior = req.model.prior();
    prior.check_dims(&v)?;
    let cfg = req.solver_config(peak);
    let out = match branch {
        DataTerm::Quadratic => ipiano_minimize(&prior, &QuadraticData { target: &v, lambda }, &v, &cfg)?,
        DataTerm::IDivergence => ipiano_minimize(&prior, &IDivergenceData { obs: &v, lambda }, &v, &cfg)?,
    };
    log::info!(
        "transform model: peak {peak}, {branch} data term, lambda {lambda}, {} iterations",
        out.trace.len()
    );
    let inv = anscombe_inverse_exact_unbiased(&out.solution);
    Ok(DenoiseOutput {
        image: inv.image,
        variant,
        branch: Some(branch),
        lambda,
        effective_peak: peak,
        minimizer: out.solution,
        trace: out.trace,
        stop: out.stop,
        clamped: inv.clamped,
    })
}

/// Bins 3x3 blocks, denoises at `9 * peak`, divides by 9 and upscales
/// bilinearly. With a bin factor of 1 this is [`denoise_transform`].
pub fn denoise_binned(req: &DenoiseRequest<'_>) -> Result<DenoiseOutput> {
    expect_variant(req, Variant::TransformBinned)?;
    req.validate()?;
    if req.bin_factor == 1 {
        let mut out = transform_at_peak(req, req.noisy, req.peak, Variant::Transform)?;
        out.variant = Variant::TransformBinned;
        return Ok(out);
    }
    let binned = bin3(req.noisy);
    let peak_b = BIN_AREA * req.peak;
    let mut out = transform_at_peak(req, &binned, peak_b, Variant::TransformBinned)?;
    out.image = unbin_bilinear(&out.image, req.noisy.width(), req.noisy.height())?.map(|v| v.max(0.0));
    Ok(out)
}

fn expect_variant(req: &DenoiseRequest<'_>, v: Variant) -> Result<()> {
    if req.variant != v {
        return Err(Error::invalid(format!("request is for the {} variant, not {v}", req.variant)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::sample_poisson;
    use crate::solver::ProxTerm;
    use crate::lambda_table::LambdaEntry;
    use crate::vst::inverse_unbiased;

    fn anscombe_model() -> FoEModel {
        FoEModel::dct_init(3, 8, 0.3, 0.5, DomainTag::Anscombe).unwrap()
    }

    fn original_model() -> FoEModel {
        FoEModel::dct_init(3, 8, 0.3, 0.5, DomainTag::Original).unwrap()
    }

    fn blocks(peak: f64) -> Image {
        Image::from_fn(24, 24, |x, y| if (x / 8 + y / 8) % 2 == 0 { peak } else { 0.25 * peak })
    }

    #[test]
    fn branch_threshold_is_inclusive_at_five() {
        assert_eq!(select_branch(5.0), DataTerm::Quadratic);
        assert_eq!(select_branch(4.99), DataTerm::IDivergence);
        assert_eq!(select_branch(40.0), DataTerm::Quadratic);
        assert_eq!(select_branch(0.1), DataTerm::IDivergence);
    }

    #[test]
    fn transform_branch_follows_peak() {
        let model = anscombe_model();
        let y = sample_poisson(&blocks(5.0), 1).unwrap();
        for (peak, want) in [(5.0, DataTerm::Quadratic), (4.99, DataTerm::IDivergence)] {
            let out = denoise(&DenoiseRequest::new(&y, peak, &model, Variant::Transform)).unwrap();
            assert_eq!(out.branch, Some(want));
        }
    }

    #[test]
    fn binned_branch_uses_nine_times_the_peak() {
        let model = anscombe_model();
        for (peak, want) in [(0.2, DataTerm::IDivergence), (0.5, DataTerm::IDivergence), (1.0, DataTerm::Quadratic)] {
            let y = sample_poisson(&blocks(peak), 2).unwrap();
            let out = denoise(&DenoiseRequest::new(&y, peak, &model, Variant::TransformBinned)).unwrap();
            assert_eq!(out.branch, Some(want), "peak {peak}");
            assert!((out.effective_peak - 9.0 * peak).abs() < 1e-12);
            assert_eq!((out.image.width(), out.image.height()), (24, 24));
            assert!(out.image.data().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn forced_branch_overrides_the_peak_rule() {
        let model = anscombe_model();
        let y = sample_poisson(&blocks(40.0), 5).unwrap();
        let table = LambdaTable::new(
            "test",
            vec![
                LambdaEntry { key: LambdaKey::Quadratic, peak: 40.0, lambda: 2.0 },
                LambdaEntry { key: LambdaKey::IDivergence, peak: 40.0, lambda: 3.0 },
            ],
        )
        .unwrap();
        let req = DenoiseRequest::new(&y, 40.0, &model, Variant::Transform).with_lambda_table(&table);
        let auto = denoise(&req).unwrap();
        assert_eq!((auto.branch, auto.lambda), (Some(DataTerm::Quadratic), 2.0));
        let forced = denoise(&req.clone().with_branch(DataTerm::IDivergence)).unwrap();
        assert_eq!((forced.branch, forced.lambda), (Some(DataTerm::IDivergence), 3.0));
    }

    #[test]
    fn bin_factor_one_is_the_transform_pipeline() {
        let model = anscombe_model();
        let y = sample_poisson(&blocks(20.0), 3).unwrap();
        let a = denoise(&DenoiseRequest::new(&y, 20.0, &model, Variant::Transform)).unwrap();
        let b = denoise(&DenoiseRequest::new(&y, 20.0, &model, Variant::TransformBinned).with_bin_factor(1)).unwrap();
        assert_eq!(a.image, b.image);
    }

    #[test]
    fn huge_lambda_returns_inverse_of_the_transform() {
        let model = anscombe_model();
        let y = sample_poisson(&blocks(40.0), 4).unwrap();
        let out = denoise(&DenoiseRequest::new(&y, 40.0, &model, Variant::Transform).with_lambda(1e9)).unwrap();
        for (a, &b) in out.image.data().iter().zip(y.data()) {
            let expect = inverse_unbiased(2.0 * (b + 0.375).sqrt());
            assert!((a - expect).abs() < 1e-5, "{a} vs {expect}");
        }
        assert_eq!(out.lambda, 1e9);
    }

    #[test]
    fn huge_lambda_direct_returns_observation() {
        let model = original_model();
        let y = Image::filled(16, 16, 7.0);
        let out = denoise(&DenoiseRequest::new(&y, 7.0, &model, Variant::Direct).with_lambda(1e9)).unwrap();
        assert!(out.image.zip_map(&y, |a, b| a - b).max_abs() < 1e-6);
    }

    #[test]
    fn direct_without_offset_keeps_zero_region() {
        let model = original_model();
        let y = Image::from_fn(32, 32, |x, _| if x < 16 { 0.0 } else { 3.0 + (x % 3) as f64 });
        let out = denoise(&DenoiseRequest::new(&y, 5.0, &model, Variant::Direct).with_zero_offset(0.0)).unwrap();
        for yy in 0..32 {
            for xx in 0..12 {
                assert_eq!(out.image.get(xx, yy), 0.0);
            }
        }
        let fixed = denoise(&DenoiseRequest::new(&y, 5.0, &model, Variant::Direct)).unwrap();
        assert!(fixed.image.get(0, 0) > 0.0);
    }

    #[test]
    fn direct_decreases_energy() {
        let model = original_model();
        let y = sample_poisson(&blocks(40.0).crop(0, 0, 24, 24).unwrap(), 5).unwrap();
        let out = denoise(&DenoiseRequest::new(&y, 40.0, &model, Variant::Direct).with_lambda(1.0)).unwrap();
        let obs = y.map(|v| if v == 0.0 { DEFAULT_ZERO_OFFSET } else { v });
        let data = IDivergenceData { obs: &obs, lambda: 1.0 };
        let prior = model.prior();
        let e = |u: &Image| prior.energy(u) + data.energy(u);
        assert!(e(&out.minimizer) <= e(&obs));
    }

    #[test]
    fn rejects_bad_requests() {
        let model = anscombe_model();
        let y = Image::filled(16, 16, 2.0);
        assert!(denoise(&DenoiseRequest::new(&y, 2.0, &model, Variant::Direct)).is_err());
        assert!(denoise(&DenoiseRequest::new(&y, 0.0, &model, Variant::Transform)).is_err());
        assert!(denoise(&DenoiseRequest::new(&y, 2.0, &model, Variant::Transform).with_lambda(-1.0)).is_err());
        let frac = Image::filled(16, 16, 2.5);
        assert!(denoise(&DenoiseRequest::new(&frac, 2.0, &model, Variant::Transform)).is_err());
        let neg = Image::filled(16, 16, -1.0);
        assert!(denoise(&DenoiseRequest::new(&neg, 2.0, &model, Variant::Transform)).is_err());
        assert!(denoise_direct(&DenoiseRequest::new(&y, 2.0, &model, Variant::Transform)).is_err());
    }

    #[test]
    fn explicit_lambda_overrides_table() {
        let model = anscombe_model();
        let y = sample_poisson(&blocks(10.0), 6).unwrap();
        let out = denoise(&DenoiseRequest::new(&y, 10.0, &model, Variant::Transform).with_lambda(0.123)).unwrap();
        assert_eq!(out.lambda, 0.123);
        let auto = denoise(&DenoiseRequest::new(&y, 10.0, &model, Variant::Transform)).unwrap();
        assert_eq!(auto.lambda, select_lambda(10.0, Variant::Transform).unwrap());
    }
}
