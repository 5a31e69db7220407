pub mod calibrate;
pub mod denoise;
pub mod eval;
pub mod noise;
pub mod train;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use poisson_foe::Image;

use crate::error::{CliError, CliResult};
use crate::io::read_image;

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "pgm", "pnm", "ppm", "f32"];

/// `path` with `suffix` appended to the full file name.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name: OsString = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

/// Image files directly inside `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::data(format!("cannot list {}: {e}", dir.display())))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        if path.is_file() && IMAGE_EXTENSIONS.contains(&ext.as_str()) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

/// Reads every image in `dir`, keyed by file stem.
pub fn load_images(dir: &Path) -> CliResult<Vec<(String, Image)>> {
    let paths = list_images(dir)?;
    if paths.is_empty() {
        return Err(CliError::data(format!("no images found in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            Ok((id, read_image(p)?))
        })
        .collect()
}

pub fn centre_crop_all(images: &mut [(String, Image)], side: usize) -> CliResult<()> {
    for (id, img) in images.iter_mut() {
        let (w, h) = (img.width(), img.height());
        if side == 0 || side > w || side > h {
            return Err(CliError::usage(format!("crop {side} does not fit image '{id}' ({w}x{h})")));
        }
        *img = img.crop((w - side) / 2, (h - side) / 2, side, side)?;
    }
    Ok(())
}

pub fn check_peak(peak: f64) -> CliResult<()> {
    if peak > 0.0 && peak.is_finite() {
        Ok(())
    } else {
        Err(CliError::usage(format!("--peak must be a positive number, got {peak}")))
    }
}

/// Stable 64-bit FNV-1a hash, used to derive per-job seeds.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Noise seed for one (image, peak) pair, independent of job order.
pub fn job_seed(base: u64, image: &str, peak: f64) -> u64 {
    fnv1a(format!("{base}/{image}/{peak}").as_bytes())
}
