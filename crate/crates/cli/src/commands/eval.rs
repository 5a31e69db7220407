//! Benchmark runner: noise, denoise and score every (image, peak, variant)
//! job, then report next to the published figures.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use clap::Args;
use poisson_foe::foe::FoEModel;
use poisson_foe::lambda_table::LambdaTable;
use poisson_foe::metrics::score;
use poisson_foe::noise::{sample_poisson, scale_to_peak};
use poisson_foe::pipeline::{denoise, DataTerm, DenoiseRequest, Variant};
use poisson_foe::Image;
use rayon::prelude::*;

use super::denoise::{load_lambda_table, parse_branch};
use super::{centre_crop_all, job_seed, load_images};
use crate::error::{CliError, CliResult};
use crate::model_file;
use crate::reference::PublishedTable;

pub const DEFAULT_PEAKS: [f64; 7] = [0.1, 0.2, 0.5, 1.0, 2.0, 4.0, 40.0];

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model trained in the Anscombe domain (transform variants).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Model trained on raw counts (direct variant).
    #[arg(long)]
    pub direct_model: Option<PathBuf>,
    /// Directory of clean test images.
    #[arg(long, default_value = "data/test")]
    pub images: PathBuf,
    /// Restrict to these image ids (file stems).
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<String>,
    /// Use centred square crops of this side.
    #[arg(long)]
    pub crop: Option<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_PEAKS)]
    pub peaks: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = ["transform".to_string(), "transform_binned".to_string()])]
    pub variants: Vec<String>,
    /// Base seed; each (image, peak) pair derives its own noise seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Force the transform-domain data term (quadratic or idiv).
    #[arg(long)]
    pub branch: Option<String>,
    #[arg(long)]
    pub lambda_table: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub markdown: Option<PathBuf>,
}

/// Published method id for a variant.
pub fn method_id(variant: Variant) -> &'static str {
    match variant {
        Variant::Direct => "FoEs",
        Variant::Transform => "FoEPNR",
        Variant::TransformBinned => "FoEPNRbin",
    }
}

#[derive(Clone, Debug)]
pub struct EvalSpec {
    pub images: Vec<(String, Image)>,
    pub peaks: Vec<f64>,
    pub variants: Vec<Variant>,
    pub seed: u64,
    pub branch: Option<DataTerm>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub image: String,
    pub peak: f64,
    pub variant: Variant,
    pub branch: Option<DataTerm>,
    pub lambda: f64,
    pub psnr_db: f64,
    pub mssim: f64,
    pub published: Option<(f64, f64)>,
}

pub struct Models<'a> {
    pub anscombe: Option<&'a FoEModel>,
    pub original: Option<&'a FoEModel>,
}

fn sort_key(r: &EvalRow) -> (String, u64, String) {
    (r.image.clone(), r.peak.to_bits(), r.variant.to_string())
}

/// Runs every job. Rows come back sorted by (image, peak, variant), with one
/// `average` row per (peak, variant) after the per-image rows.
pub fn evaluate(spec: &EvalSpec, models: &Models<'_>, table: Option<&LambdaTable>) -> CliResult<Vec<EvalRow>> {
    if spec.images.is_empty() || spec.peaks.is_empty() || spec.variants.is_empty() {
        return Err(CliError::usage("benchmark needs at least one image, peak and variant"));
    }
    for &v in &spec.variants {
        let present = match v {
            Variant::Direct => models.original.is_some(),
            _ => models.anscombe.is_some(),
        };
        if !present {
            return Err(CliError::usage(format!("the {v} variant needs a model")));
        }
    }
    let published = PublishedTable::bundled();
    let mut jobs = Vec::new();
    for (idx, _) in spec.images.iter().enumerate() {
        for &peak in &spec.peaks {
            for &variant in &spec.variants {
                jobs.push((idx, peak, variant));
            }
        }
    }
    let mut rows = jobs
        .par_iter()
        .map(|&(idx, peak, variant)| -> CliResult<EvalRow> {
            let (id, clean) = &spec.images[idx];
            let model = match variant {
                Variant::Direct => models.original,
                _ => models.anscombe,
            }
            .expect("checked above");
            let scaled = scale_to_peak(clean, peak)?;
            let noisy = sample_poisson(&scaled, job_seed(spec.seed, id, peak))?;
            let mut req = DenoiseRequest::new(&noisy, peak, model, variant);
            if let Some(t) = table {
                req = req.with_lambda_table(t);
            }
            if let Some(b) = spec.branch {
                req = req.with_branch(b);
            }
            let out = denoise(&req)?;
            let method = method_id(variant);
            let rep = score(&out.image, &scaled, peak, id.as_str(), method)?;
            log::info!("{id} peak {peak} {variant}: {:.3} dB, mssim {:.4}", rep.psnr_db, rep.mssim);
            Ok(EvalRow {
                image: id.clone(),
                peak,
                variant,
                branch: out.branch,
                lambda: out.lambda,
                psnr_db: rep.psnr_db,
                mssim: rep.mssim,
                published: published.lookup(method, peak, id).map(|r| (r.psnr_db, r.mssim)),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    rows.sort_by_key(sort_key);

    let mut groups: BTreeMap<(u64, String), Vec<&EvalRow>> = BTreeMap::new();
    for r in &rows {
        groups.entry((r.peak.to_bits(), r.variant.to_string())).or_default().push(r);
    }
    let mut averages = Vec::new();
    for group in groups.values() {
        let n = group.len() as f64;
        let first = group[0];
        averages.push(EvalRow {
            image: "average".into(),
            peak: first.peak,
            variant: first.variant,
            branch: first.branch,
            lambda: first.lambda,
            psnr_db: group.iter().map(|r| r.psnr_db).sum::<f64>() / n,
            mssim: group.iter().map(|r| r.mssim).sum::<f64>() / n,
            published: published
                .lookup(method_id(first.variant), first.peak, "average")
                .map(|r| (r.psnr_db, r.mssim)),
        });
    }
    averages.sort_by(|a, b| sort_key(a).cmp(&sort_key(b)));
    rows.extend(averages);
    Ok(rows)
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(String::new, |x| format!("{x:.digits$}"))
}

pub fn to_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from(
        "image,peak,variant,method,branch,lambda,psnr_db,mssim,published_psnr_db,published_mssim,delta_psnr_db,delta_mssim\n",
    );
    for r in rows {
        let pp = r.published.map(|p| p.0);
        let pm = r.published.map(|p| p.1);
        writeln!(
            out,
            "{},{},{},{},{},{},{:.4},{:.4},{},{},{},{}",
            r.image,
            r.peak,
            r.variant,
            method_id(r.variant),
            r.branch.map_or_else(String::new, |b| b.to_string()),
            r.lambda,
            r.psnr_db,
            r.mssim,
            opt(pp, 2),
            opt(pm, 2),
            opt(pp.map(|p| r.psnr_db - p), 2),
            opt(pm.map(|p| r.mssim - p), 3),
        )
        .unwrap();
    }
    out
}

/// One table per variant: images down, peaks across, each cell
/// `ours / published (delta)` in dB.
pub fn to_markdown(rows: &[EvalRow]) -> String {
    let mut variants: Vec<Variant> = rows.iter().map(|r| r.variant).collect();
    variants.sort_by_key(|v| v.to_string());
    variants.dedup();
    let mut out = String::new();
    for v in variants {
        let sel: Vec<&EvalRow> = rows.iter().filter(|r| r.variant == v).collect();
        let mut peaks: Vec<f64> = sel.iter().map(|r| r.peak).collect();
        peaks.sort_by(f64::total_cmp);
        peaks.dedup();
        let mut images: Vec<&str> = Vec::new();
        for r in &sel {
            if !images.contains(&r.image.as_str()) {
                images.push(&r.image);
            }
        }
        writeln!(out, "### {} ({v})\n", method_id(v)).unwrap();
        write!(out, "| image |").unwrap();
        for p in &peaks {
            write!(out, " peak {p} |").unwrap();
        }
        write!(out, "\n|---|").unwrap();
        for _ in &peaks {
            out.push_str("---|");
        }
        out.push('\n');
        for img in images {
            write!(out, "| {img} |").unwrap();
            for &p in &peaks {
                match sel.iter().find(|r| r.image == img && r.peak == p) {
                    Some(r) => match r.published {
                        Some((pp, _)) => write!(out, " {:.2} / {pp:.2} ({:+.2}) |", r.psnr_db, r.psnr_db - pp).unwrap(),
                        None => write!(out, " {:.2} |", r.psnr_db).unwrap(),
                    },
                    None => out.push_str(" |"),
                }
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

pub fn run(args: &EvalArgs) -> CliResult<()> {
    let variants = args
        .variants
        .iter()
        .map(|s| s.parse::<Variant>().map_err(|e| CliError::usage(e.to_string())))
        .collect::<CliResult<Vec<_>>>()?;
    for &p in &args.peaks {
        super::check_peak(p)?;
    }
    let branch = args.branch.as_deref().map(parse_branch).transpose()?;
    let anscombe = args.model.as_deref().map(model_file::load).transpose()?;
    let original = args.direct_model.as_deref().map(model_file::load).transpose()?;
    let table = args.lambda_table.as_deref().map(load_lambda_table).transpose()?;
    let mut images = load_images(&args.images)?;
    if !args.only.is_empty() {
        images.retain(|(id, _)| args.only.contains(id));
        if images.is_empty() {
            return Err(CliError::data("none of the requested images were found"));
        }
    }
    if let Some(m) = args.crop {
        centre_crop_all(&mut images, m)?;
    }
    let spec = EvalSpec {
        images,
        peaks: args.peaks.clone(),
        variants,
        seed: args.seed,
        branch,
    };
    let models = Models {
        anscombe: anscombe.as_ref(),
        original: original.as_ref(),
    };
    let rows = evaluate(&spec, &models, table.as_ref())?;
    let csv = to_csv(&rows);
    match &args.csv {
        Some(p) => fs::write(p, &csv)?,
        None => print!("{csv}"),
    }
    if let Some(p) = &args.markdown {
        fs::write(p, to_markdown(&rows))?;
    }
    Ok(())
}
