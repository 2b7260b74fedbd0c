//! Feature corpora: utterance matrices grouped by speaker, plus the per-bin
//! z-score statistics fitted on a training set.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::MelSpectrogram;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub speaker_id: String,
    pub utterance_id: String,
    /// `T x feature_dim`
    pub frames: Array2<f64>,
}

impl From<MelSpectrogram> for Utterance {
    fn from(mel: MelSpectrogram) -> Self {
        Self {
            speaker_id: mel.speaker_id,
            utterance_id: mel.utterance_id,
            frames: mel.frames,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn new(utterances: Vec<Utterance>) -> Self {
        Self { utterances }
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.utterances.first().map(|u| u.frames.ncols())
    }

    /// Utterance indices per speaker, in a stable (sorted) speaker order.
    pub fn by_speaker(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, u) in self.utterances.iter().enumerate() {
            map.entry(u.speaker_id.as_str()).or_default().push(i);
        }
        map
    }

    /// Checks that every utterance has the same width and at least one frame.
    pub fn validate(&self) -> Result<()> {
        let Some(dim) = self.feature_dim() else {
            return Err(Error::Data("corpus is empty".into()));
        };
        for u in &self.utterances {
            if u.frames.nrows() == 0 {
                return Err(Error::Data(format!("{}/{} has no frames", u.speaker_id, u.utterance_id)));
            }
            if u.frames.ncols() != dim {
                return Err(Error::Data(format!(
                    "{}/{} has {} feature columns, expected {dim}",
                    u.speaker_id,
                    u.utterance_id,
                    u.frames.ncols()
                )));
            }
            if u.frames.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("{}/{} has non-finite features", u.speaker_id, u.utterance_id)));
            }
        }
        Ok(())
    }

    /// Splits utterances into (train, held-out) with `held_out_fraction` of
    /// each speaker's utterances held out, chosen by `seed`.
    pub fn split_utterances(&self, held_out_fraction: f64, seed: u64) -> (Corpus, Corpus) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut train = Vec::new();
        let mut held = Vec::new();
        for (_, mut idx) in self.by_speaker() {
            idx.shuffle(&mut rng);
            let n_held = ((idx.len() as f64 * held_out_fraction).round() as usize).min(idx.len());
            let (h, t) = idx.split_at(n_held);
            let mut h = h.to_vec();
            let mut t = t.to_vec();
            h.sort_unstable();
            t.sort_unstable();
            held.extend(h.into_iter().map(|i| self.utterances[i].clone()));
            train.extend(t.into_iter().map(|i| self.utterances[i].clone()));
        }
        (Corpus::new(train), Corpus::new(held))
    }

    pub fn map_frames(&self, f: impl Fn(&Array2<f64>) -> Array2<f64>) -> Corpus {
        Corpus::new(
            self.utterances
                .iter()
                .map(|u| Utterance {
                    speaker_id: u.speaker_id.clone(),
                    utterance_id: u.utterance_id.clone(),
                    frames: f(&u.frames),
                })
                .collect(),
        )
    }
}

/// Per-feature-bin mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit(corpus: &Corpus) -> Result<Self> {
        corpus.validate()?;
        let dim = corpus.feature_dim().unwrap_or(0);
        let mut sum = Array1::<f64>::zeros(dim);
        let mut sq = Array1::<f64>::zeros(dim);
        let mut n = 0usize;
        for u in &corpus.utterances {
            sum += &u.frames.sum_axis(Axis(0));
            sq += &u.frames.mapv(|v| v * v).sum_axis(Axis(0));
            n += u.frames.nrows();
        }
        let n = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n - m * m).max(0.0);
                let sd = var.sqrt();
                if sd < 1e-8 {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, frames: &Array2<f64>) -> Array2<f64> {
        let mut out = frames.clone();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        out
    }

    pub fn denormalize(&self, frames: &Array2<f64>) -> Array2<f64> {
        let mut out = frames.clone();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
        out
    }
}
