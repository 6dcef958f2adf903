use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SPLICED_DIM;

/// Shape and decision constants of the chunk-level predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    /// Frames per chunk after subsampling.
    pub chunk_size: usize,
    /// Largest speaker count seen in training; drives the switch rule.
    pub train_speakers: usize,
    pub max_local_speakers: usize,
    pub existence_threshold: f64,
}

impl EncoderConfig {
    /// Small configuration for laptop-scale experiments.
    pub fn desk() -> Self {
        Self {
            input_dim: SPLICED_DIM,
            num_layers: 2,
            hidden_dim: 64,
            num_heads: 2,
            ff_dim: 256,
            dropout: 0.0,
            chunk_size: 25,
            train_speakers: 3,
            max_local_speakers: 5,
            existence_threshold: 0.5,
        }
    }

    /// 4 layers, 256 units, 4 heads, chunks of 50 frames.
    pub fn full() -> Self {
        Self {
            input_dim: SPLICED_DIM,
            num_layers: 4,
            hidden_dim: 256,
            num_heads: 4,
            ff_dim: 1024,
            dropout: 0.1,
            chunk_size: 50,
            train_speakers: 3,
            max_local_speakers: 5,
            existence_threshold: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.hidden_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if self.chunk_size == 0 {
            return Err(Error::Config("chunk_size must be at least 1".into()));
        }
        if !(self.existence_threshold > 0.0 && self.existence_threshold < 1.0) {
            return Err(Error::Config(format!(
                "existence_threshold {} outside (0, 1)",
                self.existence_threshold
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.input_dim == 0 || self.num_layers == 0 || self.ff_dim == 0 {
            return Err(Error::Config(
                "input_dim, num_layers and ff_dim must be positive".into(),
            ));
        }
        Ok(())
    }
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::desk()
    }
}
