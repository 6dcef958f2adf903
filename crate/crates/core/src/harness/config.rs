use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::EncoderConfig;

/// Environment variable that overrides every seed.
pub const SEED_ENV: &str = "EENDRC_SEED";

/// Seed from [`SEED_ENV`], if set.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// `lr * d^-0.5 * min(step^-0.5, step * warmup^-1.5)`
    Noam,
    Fixed,
}

/// Training settings, read from a flat `key = value` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// `desk` or `full`; the model fields below override it.
    pub preset: String,
    pub num_layers: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub num_heads: Option<usize>,
    pub ff_dim: Option<usize>,
    pub dropout: Option<f64>,
    pub chunk_size: Option<usize>,
    pub train_speakers: Option<usize>,
    pub max_local_speakers: Option<usize>,
    pub existence_threshold: Option<f64>,

    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: Schedule,
    /// Noam scale factor, or the constant rate for `fixed`.
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub seed: u64,
    pub use_global_loss: bool,
    pub window_frames: usize,
    pub average_fraction: f64,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            preset: "desk".into(),
            num_layers: None,
            hidden_dim: None,
            num_heads: None,
            ff_dim: None,
            dropout: None,
            chunk_size: None,
            train_speakers: None,
            max_local_speakers: None,
            existence_threshold: None,
            epochs: 30,
            batch_size: 4,
            schedule: Schedule::Noam,
            learning_rate: 0.5,
            warmup_steps: 400,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-9,
            grad_clip: 5.0,
            seed: 0,
            use_global_loss: false,
            window_frames: 500,
            average_fraction: 0.1,
            data_dir: None,
            out_dir: None,
        }
    }
}

impl TrainConfig {
    /// Defaults for fine-tuning the clustering stage: fixed 1e-3 rate,
    /// 10 epochs.
    pub fn clustering_default() -> Self {
        Self {
            epochs: 10,
            schedule: Schedule::Fixed,
            learning_rate: 1e-3,
            ..Self::default()
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and applies the seed override from the
    /// environment. Relative paths resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data_dir, &mut cfg.out_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.apply_env_seed()?;
        Ok(cfg)
    }

    pub fn apply_env_seed(&mut self) -> Result<()> {
        if let Some(seed) = env_seed()? {
            self.seed = seed;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.schedule == Schedule::Noam && self.warmup_steps == 0 {
            return Err(Error::Config("warmup_steps must be positive for noam".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("adam betas must be in [0, 1)".into()));
        }
        if self.window_frames == 0 {
            return Err(Error::Config("window_frames must be positive".into()));
        }
        if !(self.average_fraction > 0.0 && self.average_fraction <= 1.0) {
            return Err(Error::Config("average_fraction must be in (0, 1]".into()));
        }
        self.model_config().map(|_| ())
    }

    /// Model hyperparameters: the preset with overrides applied.
    pub fn model_config(&self) -> Result<EncoderConfig> {
        let mut m = match self.preset.as_str() {
            "desk" => EncoderConfig::desk(),
            "full" => EncoderConfig::full(),
            other => return Err(Error::Config(format!("unknown preset {other:?}"))),
        };
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = self.$f {
                    m.$f = v;
                }
            )*};
        }
        set!(
            num_layers,
            hidden_dim,
            num_heads,
            ff_dim,
            dropout,
            chunk_size,
            train_speakers,
            max_local_speakers,
            existence_threshold
        );
        m.validate()?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_file() {
        let cfg = TrainConfig::parse("epochs = 3\nbatch_size = 2\nhidden_dim = 32\nschedule = \"fixed\"\n").unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.schedule, Schedule::Fixed);
        assert_eq!(cfg.model_config().unwrap().hidden_dim, 32);
        assert_eq!(TrainConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(TrainConfig::parse("epochs = 0\n").is_err());
        assert!(TrainConfig::parse("batch_size = 0\n").is_err());
        assert!(TrainConfig::parse("bogus = 1\n").is_err());
        assert!(TrainConfig::parse("preset = \"huge\"\n").is_err());
        assert!(TrainConfig::parse("hidden_dim = 30\nnum_heads = 4\n").is_err());
    }

    #[test]
    fn full_preset() {
        let m = TrainConfig::parse("preset = \"full\"\n")
            .unwrap()
            .model_config()
            .unwrap();
        assert_eq!(m, EncoderConfig::full());
    }
}
