use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use poisson_foe::foe::FoEModel;
use poisson_foe::noise::scale_to_peak;
use poisson_foe::trainer::{TrainState, Trainer, TrainingSample};
use poisson_foe::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{load_images, sidecar};
use crate::config::TrainRecipe;
use crate::error::{CliError, CliResult};
use crate::model_file;

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of clean training images.
    pub corpus: PathBuf,
    /// Output model file.
    pub output: PathBuf,
    /// key = value training config; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from this model instead of the DCT initialisation.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Checkpoints go here (default: next to the output model).
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Per-iteration loss (default: `<output>.loss.csv`).
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
}

const CHECKPOINT_FORMAT: &str = "pfoe-checkpoint-1";

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    /// Identifies the training set the state belongs to.
    pub fingerprint: u64,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("cannot read checkpoint {}: {e}", path.display())))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(CliError::data(format!("{}: unknown checkpoint format '{}'", path.display(), ck.format)));
        }
        Ok(ck)
    }
}

/// Square crops, scaled to the recipe peak, each with one Poisson draw.
/// Images are used round-robin in file-name order.
pub fn build_samples(images: &[(String, Image)], recipe: &TrainRecipe) -> CliResult<Vec<TrainingSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let m = recipe.crop;
    let mut samples = Vec::with_capacity(recipe.n_samples);
    for i in 0..recipe.n_samples {
        let (id, img) = &images[i % images.len()];
        if img.width() < m || img.height() < m {
            return Err(CliError::data(format!("image '{id}' is smaller than the {m}x{m} crop")));
        }
        let mut attempt = 0;
        let clean = loop {
            let x0 = rng.gen_range(0..=img.width() - m);
            let y0 = rng.gen_range(0..=img.height() - m);
            let crop = img.crop(x0, y0, m, m)?;
            if crop.max() > 0.0 {
                break scale_to_peak(&crop, recipe.peak)?;
            }
            attempt += 1;
            if attempt == 100 {
                return Err(CliError::data(format!("image '{id}' has no non-black {m}x{m} crop")));
            }
        };
        samples.push(TrainingSample::simulate(clean, rng.gen())?);
    }
    Ok(samples)
}

fn fingerprint(samples: &[TrainingSample]) -> u64 {
    let mut bytes = Vec::new();
    for s in samples {
        for v in s.clean.data().iter().chain(s.noisy.data()) {
            bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    super::fnv1a(&bytes)
}

fn loss_csv(state: &TrainState) -> String {
    let mut out = String::from("iteration,loss\n");
    for (i, l) in state.loss_history.iter().enumerate() {
        out.push_str(&format!("{i},{l:e}\n"));
    }
    out
}

pub fn run(args: &TrainArgs) -> CliResult<()> {
    let recipe = match &args.config {
        Some(p) => TrainRecipe::load(p)?,
        None => TrainRecipe::default(),
    };
    let images = load_images(&args.corpus)?;
    let samples = build_samples(&images, &recipe)?;
    let print = fingerprint(&samples);
    let init = match &args.init {
        Some(p) => model_file::load(p)?,
        None => FoEModel::dct_init(
            recipe.filter_size,
            recipe.n_filters,
            recipe.init_norm,
            recipe.init_weight,
            recipe.train.objective.domain(),
        )?
        .with_boundary(recipe.boundary),
    };
    let trainer = Trainer::new(&samples, &init, recipe.train.clone())?;

    let mut state = match &args.resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if ck.fingerprint != print {
                return Err(CliError::data(format!(
                    "checkpoint {} was written for a different training set",
                    p.display()
                )));
            }
            trainer.model(&ck.state.optimizer.x)?;
            log::info!("resuming at outer iteration {}", ck.state.optimizer.iteration);
            ck.state
        }
        None => trainer.init_state(&init)?,
    };
    log::info!(
        "training {} filters of size {} on {} samples, initial loss {:e}",
        init.num_filters(),
        init.filter_size(),
        samples.len(),
        state.loss_history[0]
    );

    let ck_dir = args.checkpoint_dir.clone().unwrap_or_else(|| {
        args.output
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default()
            .join("checkpoints")
    });
    let loss_path = args.loss_csv.clone().unwrap_or_else(|| sidecar(&args.output, ".loss.csv"));
    let every = recipe.checkpoint_every;
    let mut io_error: Option<CliError> = None;
    let mut on_iteration = |st: &TrainState| {
        if io_error.is_some() {
            return;
        }
        let save = || -> CliResult<()> {
            fs::write(&loss_path, loss_csv(st))?;
            if every > 0 && (st.optimizer.iteration % every == 0 || st.stop.is_some()) {
                fs::create_dir_all(&ck_dir)?;
                let ck = Checkpoint {
                    format: CHECKPOINT_FORMAT.into(),
                    fingerprint: print,
                    state: st.clone(),
                };
                let json = serde_json::to_string(&ck)?;
                fs::write(ck_dir.join(format!("iter_{:05}.json", st.optimizer.iteration)), &json)?;
                fs::write(ck_dir.join("latest.json"), &json)?;
                model_file::save(&args.output, &trainer.model(&st.optimizer.x)?)?;
            }
            Ok(())
        };
        if let Err(e) = save() {
            io_error = Some(e);
        }
    };
    let stop = trainer.run(&mut state, &mut on_iteration)?;
    if let Some(e) = io_error {
        return Err(e);
    }
    let model = if state.optimizer.iteration == 0 { init } else { trainer.model(&state.optimizer.x)? };
    model_file::save(&args.output, &model)?;
    fs::write(&loss_path, loss_csv(&state))?;
    let first = state.loss_history[0];
    let last = *state.loss_history.last().unwrap_or(&first);
    println!(
        "trained {} iterations ({stop:?}); loss {first:e} -> {last:e}; model written to {}",
        state.optimizer.iteration,
        args.output.display()
    );
    Ok(())
}
