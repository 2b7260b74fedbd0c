//! Synthetic corpus with known content and speaker factors.
//!
//! Every utterance is a piecewise-constant sequence of symbols drawn from a
//! shared alphabet, plus a constant per-speaker offset added to every frame.
//! Because both factors are stored, a trained model's speaker embeddings and
//! conversions can be scored against ground truth.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Utterance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticCorpusSpec {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    pub feature_dim: usize,
    pub alphabet_size: usize,
    pub min_segment: usize,
    pub max_segment: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub content_scale: f64,
    pub offset_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            n_speakers: 4,
            utterances_per_speaker: 20,
            feature_dim: 20,
            alphabet_size: 6,
            min_segment: 3,
            max_segment: 8,
            min_frames: 48,
            max_frames: 96,
            content_scale: 1.0,
            offset_scale: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_speakers < 2 {
            return fail("synthetic corpus needs at least 2 speakers");
        }
        if self.utterances_per_speaker < 2 {
            return fail("synthetic corpus needs at least 2 utterances per speaker");
        }
        if self.feature_dim == 0 || self.alphabet_size == 0 {
            return fail("feature_dim and alphabet_size must be at least 1");
        }
        if self.min_segment == 0 || self.min_segment > self.max_segment {
            return fail("need 1 <= min_segment <= max_segment");
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return fail("need 1 <= min_frames <= max_frames");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticUtterance {
    pub speaker: usize,
    pub speaker_id: String,
    pub utterance_id: String,
    /// Alphabet symbol active at each frame.
    pub symbols: Vec<usize>,
    pub content: Array2<f64>,
    pub frames: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub spec: SyntheticCorpusSpec,
    /// `alphabet_size x feature_dim`
    pub alphabet: Array2<f64>,
    /// `n_speakers x feature_dim`
    pub offsets: Array2<f64>,
    pub utterances: Vec<SyntheticUtterance>,
}

pub fn speaker_name(speaker: usize) -> String {
    format!("spk{speaker:02}")
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Symbol track for one utterance; seeded per utterance so it can be replayed.
fn symbol_track(spec: &SyntheticCorpusSpec, speaker: usize, index: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1 + (speaker * spec.utterances_per_speaker + index) as u64);
    let len = rng.gen_range(spec.min_frames..=spec.max_frames);
    let mut symbols = Vec::with_capacity(len);
    while symbols.len() < len {
        let sym = rng.gen_range(0..spec.alphabet_size);
        let seg = rng.gen_range(spec.min_segment..=spec.max_segment);
        symbols.extend(std::iter::repeat(sym).take(seg.min(len - symbols.len())));
    }
    symbols
}

pub fn generate_synthetic_corpus(spec: &SyntheticCorpusSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let alphabet = normal_matrix(&mut rng, spec.alphabet_size, spec.feature_dim, spec.content_scale);
    let offsets = normal_matrix(&mut rng, spec.n_speakers, spec.feature_dim, spec.offset_scale);
    for a in 0..spec.n_speakers {
        for b in a + 1..spec.n_speakers {
            if offsets.row(a) == offsets.row(b) {
                return Err(Error::Config(format!("speakers {a} and {b} drew identical offsets")));
            }
        }
    }

    let mut corpus = SyntheticCorpus {
        spec: spec.clone(),
        alphabet,
        offsets,
        utterances: Vec::with_capacity(spec.n_speakers * spec.utterances_per_speaker),
    };
    for speaker in 0..spec.n_speakers {
        for index in 0..spec.utterances_per_speaker {
            let symbols = symbol_track(spec, speaker, index);
            let content = corpus.content_matrix(&symbols);
            let frames = corpus.with_offset(&content, speaker);
            corpus.utterances.push(SyntheticUtterance {
                speaker,
                speaker_id: speaker_name(speaker),
                utterance_id: format!("{}_u{index:03}", speaker_name(speaker)),
                symbols,
                content,
                frames,
            });
        }
    }
    Ok(corpus)
}

impl SyntheticCorpus {
    fn content_matrix(&self, symbols: &[usize]) -> Array2<f64> {
        self.alphabet.select(Axis(0), symbols)
    }

    fn with_offset(&self, content: &Array2<f64>, speaker: usize) -> Array2<f64> {
        content + &self.offsets.row(speaker)
    }

    pub fn offset(&self, speaker: usize) -> Array1<f64> {
        self.offsets.row(speaker).to_owned()
    }

    /// The content of utterance `index` rendered in `speaker`'s voice.
    pub fn render_as(&self, index: usize, speaker: usize) -> Array2<f64> {
        self.with_offset(&self.utterances[index].content, speaker)
    }

    pub fn speaker_of(&self, speaker_id: &str) -> Option<usize> {
        (0..self.spec.n_speakers).find(|&s| speaker_name(s) == speaker_id)
    }

    pub fn find(&self, speaker_id: &str, utterance_id: &str) -> Option<usize> {
        self.utterances
            .iter()
            .position(|u| u.speaker_id == speaker_id && u.utterance_id == utterance_id)
    }

    pub fn to_corpus(&self) -> Corpus {
        Corpus::new(
            self.utterances
                .iter()
                .map(|u| Utterance {
                    speaker_id: u.speaker_id.clone(),
                    utterance_id: u.utterance_id.clone(),
                    frames: u.frames.clone(),
                })
                .collect(),
        )
    }
}
