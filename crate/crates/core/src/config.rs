//! Run configuration file.
//!
//! A run is described by one TOML file with optional sections `[train]`,
//! `[model]`, `[frontend]`, `[weights]`, `[synthetic]` and `[split]`. Missing
//! keys take their defaults; unknown keys are rejected with the offending name.
//!
//! ```
//! use avqvc::config::RunConfig;
//!
//! let cfg = RunConfig::from_toml_str("seed = 7\n[train]\nsteps = 10\n").unwrap();
//! let cfg = cfg.resolved();
//! assert_eq!(cfg.train.steps, 10);
//! assert_eq!(cfg.model.seed, 7);
//! assert!(RunConfig::from_toml_str("[train]\nstep = 10\n").is_err());
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::FrontendConfig;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::ModelConfig;
use crate::synthetic::SyntheticCorpusSpec;
use crate::training::TrainConfig;

/// Utterance-level held-out split used by the disentanglement metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub held_out_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            held_out_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// When set, replaces every per-section seed.
    pub seed: Option<u64>,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub frontend: FrontendConfig,
    pub weights: LossWeights,
    pub synthetic: SyntheticCorpusSpec,
    pub split: SplitConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Copy with the top-level seed pushed into every section.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        if let Some(seed) = self.seed {
            out.train.seed = seed;
            out.model.seed = seed;
            out.synthetic.seed = seed;
            out.split.seed = seed;
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model.validate()?;
        self.frontend.validate()?;
        self.weights.validate()?;
        self.synthetic.validate()?;
        if !(0.0..1.0).contains(&self.split.held_out_fraction) {
            return Err(Error::Config(format!(
                "split.held_out_fraction must lie in [0, 1), got {}",
                self.split.held_out_fraction
            )));
        }
        Ok(())
    }

    /// Every accepted key in dotted form, for help output.
    pub fn recognized_keys() -> Vec<String> {
        let value = toml::Value::try_from(RunConfig {
            seed: Some(0),
            weights: LossWeights {
                diff_floor: Some(0.0),
                ..LossWeights::default()
            },
            ..RunConfig::default()
        })
        .expect("run config converts to a TOML value");
        let mut keys = Vec::new();
        collect_keys(&value, "", &mut keys);
        keys
    }
}

fn collect_keys(value: &toml::Value, prefix: &str, out: &mut Vec<String>) {
    match value.as_table() {
        Some(table) => {
            for (k, v) in table {
                let name = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                collect_keys(v, &name, out);
            }
        }
        None => out.push(prefix.to_string()),
    }
}
