use std::fs;
use std::path::PathBuf;

use clap::Args;
use poisson_foe::lambda_table::LambdaTable;
use poisson_foe::noise::{estimate_peak, BIN_AREA};
use poisson_foe::pipeline::{denoise, DataTerm, DenoiseOutput, DenoiseRequest, Variant, DEFAULT_ZERO_OFFSET};

use super::check_peak;
use super::noise::NoiseMeta;
use crate::config::load_solver;
use crate::error::{CliError, CliResult};
use crate::io::{read_image, write_image};
use crate::model_file;

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    /// Noisy counts.
    pub input: PathBuf,
    /// Estimated intensities (.f32 keeps full precision).
    pub output: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Defaults to the value recorded by `noise`, else estimated from the data.
    #[arg(long)]
    pub peak: Option<f64>,
    /// direct, transform or transform_binned.
    #[arg(long, default_value = "transform")]
    pub variant: String,
    /// Data-term weight; overrides the calibration table.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Replacement for zero counts (direct variant).
    #[arg(long = "c", default_value_t = DEFAULT_ZERO_OFFSET)]
    pub zero_offset: f64,
    /// Force the transform-domain data term (quadratic or idiv).
    #[arg(long)]
    pub branch: Option<String>,
    /// Write the per-iteration solver trace as CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Calibration table to use instead of the built-in one.
    #[arg(long)]
    pub lambda_table: Option<PathBuf>,
    /// key = value file with `solver.<field>` overrides.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn parse_branch(s: &str) -> CliResult<DataTerm> {
    match s {
        "quadratic" => Ok(DataTerm::Quadratic),
        "idiv" => Ok(DataTerm::IDivergence),
        other => Err(CliError::usage(format!("unknown branch '{other}' (quadratic or idiv)"))),
    }
}

pub fn load_lambda_table(path: &std::path::Path) -> CliResult<LambdaTable> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read lambda table {}: {e}", path.display())))?;
    Ok(text.parse()?)
}

pub fn summary_line(out: &DenoiseOutput) -> String {
    let branch = out.branch.map_or_else(|| "none".to_string(), |b| b.to_string());
    format!(
        "variant={} branch={} lambda={} peak={} iterations={} stop={:?} clamped={}",
        out.variant,
        branch,
        out.lambda,
        out.effective_peak,
        out.trace.len(),
        out.stop,
        out.clamped
    )
}

pub fn run(args: &DenoiseArgs) -> CliResult<()> {
    let variant: Variant = args.variant.parse().map_err(|e: poisson_foe::Error| CliError::usage(e.to_string()))?;
    let branch = args.branch.as_deref().map(parse_branch).transpose()?;
    if let Some(l) = args.lambda {
        if !(l > 0.0 && l.is_finite()) {
            return Err(CliError::usage(format!("--lambda must be positive, got {l}")));
        }
    }
    if !(args.zero_offset >= 0.0) {
        return Err(CliError::usage("--c must be non-negative"));
    }
    let noisy = read_image(&args.input)?;
    let model = model_file::load(&args.model)?;
    if model.domain() != variant.required_domain() {
        return Err(CliError::usage(format!(
            "model {} was trained in the {} domain but the {variant} variant needs a {} model",
            args.model.display(),
            model.domain(),
            variant.required_domain()
        )));
    }
    let peak = match args.peak {
        Some(p) => {
            check_peak(p)?;
            p
        }
        None => match NoiseMeta::read(&args.input)? {
            // an already binned file carries nine times the nominal peak
            Some(meta) if meta.bin > 1 && variant != Variant::TransformBinned => meta.peak * BIN_AREA,
            Some(meta) => meta.peak,
            None => {
                let p = estimate_peak(&noisy);
                log::warn!("no peak given; estimated {p} from the data");
                if !(p > 0.0) {
                    return Err(CliError::data("cannot estimate the peak of an all-zero image; pass --peak"));
                }
                p
            }
        },
    };
    let table = args.lambda_table.as_deref().map(load_lambda_table).transpose()?;
    let mut req = DenoiseRequest::new(&noisy, peak, &model, variant).with_zero_offset(args.zero_offset);
    if let Some(l) = args.lambda {
        req = req.with_lambda(l);
        log::info!("lambda {l} taken from the command line");
    }
    if let Some(t) = &table {
        req = req.with_lambda_table(t);
    }
    if let Some(b) = branch {
        req = req.with_branch(b);
    }
    if let Some(path) = &args.config {
        let solver_peak = if variant == Variant::TransformBinned { peak * BIN_AREA } else { peak };
        req = req.with_solver(load_solver(path, solver_peak)?);
    }
    let out = denoise(&req)?;
    log::info!("{}", summary_line(&out));
    write_image(&args.output, &out.image)?;
    if let Some(path) = &args.trace {
        fs::write(path, out.trace.to_csv())?;
    }
    println!("{}", summary_line(&out));
    Ok(())
}
