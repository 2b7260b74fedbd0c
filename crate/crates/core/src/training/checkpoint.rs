use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Adam, TrainConfig};
use crate::audio::FrontendConfig;
use crate::corpus::FeatureStats;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::Model;
use crate::util::atomic_write;

pub const CHECKPOINT_MAGIC: &str = "AVQVC-CHECKPOINT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume training or run conversion.
///
/// The batch for step `n` is derived from `train.seed` and `n`, so `step`
/// together with the seed is the full sampler state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Adam,
    pub weights: LossWeights,
    pub frontend: FrontendConfig,
    pub stats: FeatureStats,
    pub train: TrainConfig,
    pub step: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let body = serde_json::to_vec(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let digest = hex::encode(Sha256::digest(&body));
        let mut out = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION} {digest}\n").into_bytes();
        out.extend_from_slice(&body);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("missing header".into()))?;
        let header = std::str::from_utf8(&bytes[..newline]).map_err(|_| Error::Checkpoint("header is not text".into()))?;
        let fields: Vec<&str> = header.split(' ').collect();
        let [magic, version, digest] = fields[..] else {
            return Err(Error::Checkpoint(format!("malformed header {header:?}")));
        };
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!("not a checkpoint (magic {magic:?})")));
        }
        if version != CHECKPOINT_VERSION.to_string() {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let body = &bytes[newline + 1..];
        if hex::encode(Sha256::digest(body)) != digest {
            return Err(Error::Checkpoint("checksum mismatch, file is corrupt".into()));
        }
        serde_json::from_slice(body).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

/// Writes via a temporary file and rename, so an interrupted save leaves the
/// previous checkpoint intact.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    atomic_write(path, &ckpt.to_bytes()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
