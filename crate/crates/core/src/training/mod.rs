//! Triplet sampling, the embedding-swap objective, Adam, checkpoints and the
//! step-based training loop.

mod checkpoint;
mod objective;
mod optim;
mod sampler;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use objective::{self_objective, triplet_objective, Objective};
pub use optim::{clip_global_norm, Adam};
pub use sampler::{Batch, BatchSchedule, Triplet, TripletSampler};
pub use trainer::{train, train_step, TrainOutputs, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Triplet training with the speaker-swap reconstruction.
    #[default]
    Avqvc,
    /// Single-utterance self reconstruction with the latent loss only.
    Vqvc,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avqvc" => Ok(Mode::Avqvc),
            "vqvc" => Ok(Mode::Vqvc),
            other => Err(Error::Config(format!("unknown mode {other:?} (expected avqvc or vqvc)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm ceiling.
    pub grad_clip: f64,
    pub seed: u64,
    pub mode: Mode,
    /// Frames per training crop.
    pub segment_len: usize,
    pub log_every: u64,
    pub checkpoint_every: u64,
    /// Background batch producers; 0 samples inline.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1_000_000,
            batch_size: 16,
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-8,
            grad_clip: 1.0,
            seed: 0,
            mode: Mode::Avqvc,
            segment_len: 128,
            log_every: 100,
            checkpoint_every: 10_000,
            workers: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.segment_len == 0 {
            return Err(Error::Config("segment_len must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_echo_reference_setup() {
        let c = TrainConfig::default();
        assert_eq!(c.batch_size, 16);
        assert_eq!((c.adam_beta1, c.adam_beta2), (0.9, 0.98));
        assert_eq!(c.steps, 1_000_000);
        assert_eq!(c.mode, Mode::Avqvc);
        c.validate().unwrap();
    }

    #[test]
    fn mode_parses() {
        assert_eq!("vqvc".parse::<Mode>().unwrap(), Mode::Vqvc);
        assert!("gan".parse::<Mode>().is_err());
    }
}
