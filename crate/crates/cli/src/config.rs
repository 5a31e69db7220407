//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Solver fields are
//! addressed as `lower.<field>` inside a training config and as
//! `solver.<field>` for denoising; L-BFGS fields as `lbfgs.<field>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use poisson_foe::solver::SolverConfig;
use poisson_foe::trainer::lbfgs::LbfgsConfig;
use poisson_foe::trainer::TrainConfig;
use poisson_foe::BoundaryRule;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::data(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if k.is_empty() {
                return Err(CliError::data(format!("line {}: empty key", n + 1)));
            }
            if entries.insert(k.clone(), v).is_some() {
                return Err(CliError::data(format!("line {}: duplicate key '{k}'", n + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Removes `key` and parses its value, leaving `target` alone when absent.
    pub fn take<T: FromStr>(&mut self, key: &str, target: &mut T) -> CliResult<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.entries.remove(key) {
            *target = v
                .parse()
                .map_err(|e| CliError::data(format!("config key '{key}': cannot parse '{v}': {e}")))?;
        }
        Ok(())
    }

    /// Fails if any key was never consumed.
    pub fn finish(self) -> CliResult<()> {
        match self.entries.keys().next() {
            None => Ok(()),
            Some(_) => Err(CliError::data(format!(
                "unknown config key(s): {}",
                self.entries.keys().cloned().collect::<Vec<_>>().join(", ")
            ))),
        }
    }
}

pub fn apply_solver(kv: &mut KeyValues, prefix: &str, cfg: &mut SolverConfig) -> CliResult<()> {
    let key = |f: &str| format!("{prefix}.{f}");
    kv.take(&key("gamma"), &mut cfg.gamma)?;
    kv.take(&key("lipschitz_init"), &mut cfg.lipschitz_init)?;
    kv.take(&key("backtrack_factor"), &mut cfg.backtrack_factor)?;
    kv.take(&key("lipschitz_relax"), &mut cfg.lipschitz_relax)?;
    kv.take(&key("step_scale"), &mut cfg.step_scale)?;
    kv.take(&key("max_iters"), &mut cfg.max_iters)?;
    kv.take(&key("rel_tol"), &mut cfg.rel_tol)?;
    kv.take(&key("max_backtracks"), &mut cfg.max_backtracks)?;
    Ok(())
}

fn apply_lbfgs(kv: &mut KeyValues, cfg: &mut LbfgsConfig) -> CliResult<()> {
    kv.take("lbfgs.memory", &mut cfg.memory)?;
    kv.take("lbfgs.armijo_c1", &mut cfg.armijo_c1)?;
    kv.take("lbfgs.shrink", &mut cfg.shrink)?;
    kv.take("lbfgs.max_line_search", &mut cfg.max_line_search)?;
    kv.take("lbfgs.first_step_norm", &mut cfg.first_step_norm)?;
    Ok(())
}

pub fn apply_train(kv: &mut KeyValues, cfg: &mut TrainConfig) -> CliResult<()> {
    kv.take("objective", &mut cfg.objective)?;
    kv.take("data_lambda", &mut cfg.data_lambda)?;
    kv.take("zero_offset_c", &mut cfg.zero_offset_c)?;
    kv.take("max_outer_iters", &mut cfg.max_outer_iters)?;
    kv.take("rel_loss_tol", &mut cfg.rel_loss_tol)?;
    kv.take("newton_steps", &mut cfg.newton_steps)?;
    kv.take("stationarity_target", &mut cfg.stationarity_target)?;
    kv.take("stationarity_tol", &mut cfg.stationarity_tol)?;
    kv.take("cg_tol", &mut cfg.cg_tol)?;
    kv.take("cg_max_iters", &mut cfg.cg_max_iters)?;
    kv.take("warm_start", &mut cfg.warm_start)?;
    apply_lbfgs(kv, &mut cfg.lbfgs)?;
    apply_solver(kv, "lower", &mut cfg.lower_solver)
}

/// How training samples are cut from the corpus and how the model starts.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecipe {
    pub n_samples: usize,
    /// Side of the square crops.
    pub crop: usize,
    pub peak: f64,
    pub n_filters: usize,
    pub filter_size: usize,
    pub init_norm: f64,
    pub init_weight: f64,
    pub boundary: BoundaryRule,
    /// Drives crop positions and noise.
    pub seed: u64,
    /// Write a checkpoint every this many accepted steps; 0 disables.
    pub checkpoint_every: usize,
    pub train: TrainConfig,
}

impl Default for TrainRecipe {
    fn default() -> Self {
        Self {
            n_samples: 20,
            crop: 64,
            peak: 40.0,
            n_filters: 24,
            filter_size: 5,
            init_norm: 0.1,
            init_weight: 1.0,
            boundary: BoundaryRule::Symmetric,
            seed: 0,
            checkpoint_every: 1,
            train: TrainConfig::default(),
        }
    }
}

impl TrainRecipe {
    pub fn from_key_values(mut kv: KeyValues) -> CliResult<Self> {
        let mut r = Self::default();
        kv.take("n_samples", &mut r.n_samples)?;
        kv.take("crop", &mut r.crop)?;
        kv.take("peak", &mut r.peak)?;
        kv.take("n_filters", &mut r.n_filters)?;
        kv.take("filter_size", &mut r.filter_size)?;
        kv.take("init_norm", &mut r.init_norm)?;
        kv.take("init_weight", &mut r.init_weight)?;
        kv.take("boundary", &mut r.boundary)?;
        kv.take("seed", &mut r.seed)?;
        kv.take("checkpoint_every", &mut r.checkpoint_every)?;
        apply_train(&mut kv, &mut r.train)?;
        kv.finish()?;
        r.validate()?;
        Ok(r)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        Self::from_key_values(KeyValues::load(path)?)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.n_samples == 0 {
            return Err(CliError::data("n_samples must be at least 1"));
        }
        if self.crop < self.filter_size {
            return Err(CliError::data("crop must be at least the filter size"));
        }
        if !(self.peak > 0.0 && self.peak.is_finite()) {
            return Err(CliError::data(format!("peak must be positive, got {}", self.peak)));
        }
        self.train.validate()?;
        Ok(())
    }
}

/// Solver overrides for `denoise`, read from `solver.<field>` keys.
pub fn load_solver(path: &Path, peak: f64) -> CliResult<SolverConfig> {
    let mut kv = KeyValues::load(path)?;
    let mut cfg = SolverConfig::for_peak(peak);
    apply_solver(&mut kv, "solver", &mut cfg)?;
    kv.finish()?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use poisson_foe::trainer::Objective;

    #[test]
    fn every_field_is_addressable() {
        let text = "
            # desk run
            n_samples = 3
            crop = 16
            peak = 2.5
            n_filters = 4
            filter_size = 3
            init_norm = 0.2
            init_weight = 0.5
            boundary = periodic
            seed = 7
            checkpoint_every = 2
            objective = original
            data_lambda = 3
            zero_offset_c = 0.2
            max_outer_iters = 11
            rel_loss_tol = 1e-3
            newton_steps = 4
            stationarity_target = 1e-7
            stationarity_tol = 1e-3
            cg_tol = 1e-6
            cg_max_iters = 50
            warm_start = false
            lbfgs.memory = 5
            lbfgs.armijo_c1 = 1e-3
            lbfgs.shrink = 0.25
            lbfgs.max_line_search = 9
            lbfgs.first_step_norm = 0.5
            lower.gamma = 0.5
            lower.lipschitz_init = 2
            lower.backtrack_factor = 1.5
            lower.lipschitz_relax = 1.1
            lower.step_scale = 1.5
            lower.max_iters = 77
            lower.rel_tol = 1e-5
            lower.max_backtracks = 10
        ";
        let r = TrainRecipe::from_key_values(KeyValues::parse(text).unwrap()).unwrap();
        assert_eq!(r.n_samples, 3);
        assert_eq!(r.boundary, BoundaryRule::Periodic);
        assert_eq!(r.train.objective, Objective::OriginalDomain);
        assert!(!r.train.warm_start);
        assert_eq!(r.train.lbfgs.max_line_search, 9);
        assert_eq!(r.train.lower_solver.max_iters, 77);
        assert_eq!(r.train.lower_solver.max_backtracks, 10);
        assert_eq!(r.train.lower_solver.gamma, 0.5);
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed_keys() {
        let parse = |t: &str| KeyValues::parse(t).and_then(TrainRecipe::from_key_values);
        assert!(parse("peak = 40").is_ok());
        assert!(parse("peek = 40").is_err());
        assert!(parse("peak = 40\npeak = 2").is_err());
        assert!(parse("peak 40").is_err());
        assert!(parse("peak = forty").is_err());
        assert!(parse("peak = 0").is_err());
        assert!(parse("objective = original\nzero_offset_c = 0").is_err());
    }
}
