//! Picks the data-term weight per peak by maximizing mean PSNR on a
//! validation set, and writes the result as a lambda table.

use std::fs;
use std::path::PathBuf;

use clap::Args;
use poisson_foe::foe::FoEModel;
use poisson_foe::lambda_table::{LambdaEntry, LambdaKey, LambdaTable};
use poisson_foe::metrics::score;
use poisson_foe::noise::{sample_poisson, scale_to_peak};
use poisson_foe::pipeline::{denoise, select_branch, DataTerm, DenoiseRequest, Variant};
use poisson_foe::Image;
use rayon::prelude::*;

use super::denoise::parse_branch;
use super::{centre_crop_all, check_peak, job_seed, load_images};
use crate::error::{CliError, CliResult};
use crate::model_file;

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Validation images, disjoint from the test set.
    #[arg(long, default_value = "data/validation")]
    pub images: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub peaks: Vec<f64>,
    /// transform or direct.
    #[arg(long, default_value = "transform")]
    pub variant: String,
    /// Calibrate this data term at every peak instead of the peak rule's choice.
    #[arg(long)]
    pub branch: Option<String>,
    /// Centre of the search grid.
    #[arg(long, default_value_t = 1.0)]
    pub lambda0: f64,
    /// The grid spans lambda0 * 2^-octaves ..= lambda0 * 2^octaves.
    #[arg(long, default_value_t = 4)]
    pub octaves: u32,
    #[arg(long, default_value_t = 1000)]
    pub seed: u64,
    /// Use centred square crops of this side to save time.
    #[arg(long)]
    pub crop: Option<usize>,
    /// Table to update; entries for other (key, peak) pairs are kept.
    #[arg(long)]
    pub output: PathBuf,
}

struct Problem<'a> {
    model: &'a FoEModel,
    variant: Variant,
    branch: DataTerm,
    peak: f64,
    /// (id, scaled clean, noisy)
    data: Vec<(String, Image, Image)>,
}

impl Problem<'_> {
    fn mean_psnr(&self, lambda: f64) -> CliResult<f64> {
        let scores = self
            .data
            .par_iter()
            .map(|(id, clean, noisy)| -> CliResult<f64> {
                let req = DenoiseRequest::new(noisy, self.peak, self.model, self.variant)
                    .with_lambda(lambda)
                    .with_branch(self.branch);
                let out = denoise(&req)?;
                Ok(score(&out.image, clean, self.peak, id.as_str(), "calibration")?.psnr_db)
            })
            .collect::<CliResult<Vec<f64>>>()?;
        Ok(scores.iter().sum::<f64>() / scores.len() as f64)
    }
}

fn search(p: &Problem<'_>, lambda0: f64, octaves: u32) -> CliResult<(f64, f64)> {
    let consider = |best: &mut (f64, f64), lambda: f64| -> CliResult<()> {
        let v = p.mean_psnr(lambda)?;
        let label = if p.variant == Variant::Direct { "direct".to_string() } else { p.branch.to_string() };
        log::info!("peak {} {label}: lambda {lambda:.6} -> {v:.4} dB", p.peak);
        if v > best.1 {
            *best = (lambda, v);
        }
        Ok(())
    };
    let mut best = (f64::NAN, f64::NEG_INFINITY);
    let o = octaves as i32;
    for k in -o..=o {
        consider(&mut best, lambda0 * 2f64.powi(k))?;
    }
    let centre = best.0;
    consider(&mut best, centre * 2f64.sqrt())?;
    consider(&mut best, centre / 2f64.sqrt())?;
    Ok(best)
}

pub fn run(args: &CalibrateArgs) -> CliResult<()> {
    let variant: Variant = args.variant.parse().map_err(|e: poisson_foe::Error| CliError::usage(e.to_string()))?;
    if variant == Variant::TransformBinned {
        return Err(CliError::usage("calibrate the transform variant; the binned pipeline reuses it at nine times the peak"));
    }
    if !(args.lambda0 > 0.0) {
        return Err(CliError::usage("--lambda0 must be positive"));
    }
    for &p in &args.peaks {
        check_peak(p)?;
    }
    let forced = args.branch.as_deref().map(parse_branch).transpose()?;
    let model = model_file::load(&args.model)?;
    if model.domain() != variant.required_domain() {
        return Err(CliError::usage(format!("the {variant} variant needs a {} model", variant.required_domain())));
    }
    let mut images = load_images(&args.images)?;
    if let Some(m) = args.crop {
        centre_crop_all(&mut images, m)?;
    }
    let (mut table, earlier): (Vec<LambdaEntry>, Option<String>) = if args.output.exists() {
        let text = fs::read_to_string(&args.output)?;
        let old = text.parse::<LambdaTable>()?;
        (old.entries().to_vec(), Some(old.provenance.clone()))
    } else {
        (Vec::new(), None)
    };
    for &peak in &args.peaks {
        let branch = forced.unwrap_or_else(|| select_branch(peak));
        let data = images
            .iter()
            .map(|(id, clean)| -> CliResult<(String, Image, Image)> {
                let scaled = scale_to_peak(clean, peak)?;
                let noisy = sample_poisson(&scaled, job_seed(args.seed, id, peak))?;
                Ok((id.clone(), scaled, noisy))
            })
            .collect::<CliResult<Vec<_>>>()?;
        let problem = Problem {
            model: &model,
            variant,
            branch,
            peak,
            data,
        };
        let (lambda, psnr) = search(&problem, args.lambda0, args.octaves)?;
        let key = match (variant, branch) {
            (Variant::Direct, _) => LambdaKey::Direct,
            (_, DataTerm::Quadratic) => LambdaKey::Quadratic,
            (_, DataTerm::IDivergence) => LambdaKey::IDivergence,
        };
        println!("{key} peak {peak}: lambda {lambda} ({psnr:.3} dB mean)");
        table.retain(|e| !(e.key == key && e.peak == peak));
        table.push(LambdaEntry { key, peak, lambda });
    }
    let ids: Vec<&str> = images.iter().map(|(id, _)| id.as_str()).collect();
    let provenance = format!(
        "mean-PSNR grid search on {} (seed {}) with model {}",
        ids.join("+"),
        args.seed,
        args.model.file_name().and_then(|s| s.to_str()).unwrap_or("?")
    );
    let provenance = match earlier {
        Some(old) if !old.is_empty() && !old.contains(&provenance) && old != "uncalibrated defaults" => format!("{old}; {provenance}"),
        _ => provenance,
    };
    let table = LambdaTable::new(provenance, table)?;
    fs::write(&args.output, table.to_string())?;
    Ok(())
}
