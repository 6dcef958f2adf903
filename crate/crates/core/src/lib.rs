//! Two-stage end-to-end speaker diarization: a chunk-level EEND-EDA
//! predictor followed by recurrent neural clustering of chunk attractors.

pub mod assignment;
pub mod autograd;
pub mod baseline;
pub mod clustering;
pub mod datasim;
pub mod error;
pub mod features;
pub mod harness;
pub mod losses;
pub mod model;
pub mod nn;
pub mod scoring;

pub use error::{Error, Result};
