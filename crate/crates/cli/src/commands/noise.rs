use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use poisson_foe::noise::{bin3, sample_poisson, scale_to_peak, BIN_SIZE};

use super::{check_peak, sidecar};
use crate::config::KeyValues;
use crate::error::{CliError, CliResult};
use crate::io::{read_image, write_image};

#[derive(Debug, Args)]
pub struct NoiseArgs {
    /// Clean grayscale image.
    pub input: PathBuf,
    /// Noisy counts (.png, .pgm or .f32).
    pub output: PathBuf,
    /// Maximum expected count after scaling.
    #[arg(long)]
    pub peak: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sum 3x3 blocks of the noisy counts.
    #[arg(long)]
    pub bin: bool,
}

/// What `noise` records next to its output.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseMeta {
    pub peak: f64,
    pub seed: u64,
    pub bin: usize,
}

impl NoiseMeta {
    pub fn path_for(image: &Path) -> PathBuf {
        sidecar(image, ".meta")
    }

    pub fn to_text(&self) -> String {
        format!("peak = {}\nseed = {}\nbin = {}\n", self.peak, self.seed, self.bin)
    }

    pub fn read(image: &Path) -> CliResult<Option<Self>> {
        let path = Self::path_for(image);
        if !path.exists() {
            return Ok(None);
        }
        let mut kv = KeyValues::load(&path)?;
        let mut meta = NoiseMeta {
            peak: f64::NAN,
            seed: 0,
            bin: 1,
        };
        kv.take("peak", &mut meta.peak)?;
        kv.take("seed", &mut meta.seed)?;
        kv.take("bin", &mut meta.bin)?;
        kv.finish()?;
        if !(meta.peak > 0.0) {
            return Err(CliError::data(format!("{}: missing or invalid peak", path.display())));
        }
        Ok(Some(meta))
    }
}

pub fn run(args: &NoiseArgs) -> CliResult<()> {
    check_peak(args.peak)?;
    let clean = read_image(&args.input)?;
    let scaled = scale_to_peak(&clean, args.peak)?;
    let mut noisy = sample_poisson(&scaled, args.seed)?;
    if args.bin {
        noisy = bin3(&noisy);
    }
    write_image(&args.output, &noisy)?;
    let meta = NoiseMeta {
        peak: args.peak,
        seed: args.seed,
        bin: if args.bin { BIN_SIZE } else { 1 },
    };
    fs::write(NoiseMeta::path_for(&args.output), meta.to_text())?;
    println!(
        "wrote {} ({}x{}, peak {}, seed {}, mean count {:.4})",
        args.output.display(),
        noisy.width(),
        noisy.height(),
        args.peak,
        args.seed,
        noisy.mean()
    );
    Ok(())
}
