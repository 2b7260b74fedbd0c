//! One-shot conversion and waveform synthesis.
//!
//! `convert` decodes the source utterance's content with the target
//! utterance's speaker vector. Waveforms are recovered classically: the mel
//! magnitudes are mapped back to linear-frequency magnitudes by non-negative
//! least squares against the filter bank, then Griffin-Lim iterations estimate
//! a consistent phase.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use crate::audio::{istft, mel_filterbank, stft, AudioClip, FrontendConfig, MelSpectrogram};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::training::Checkpoint;

pub const DEFAULT_GRIFFIN_LIM_ITERS: usize = 60;
const NNLS_ITERS: usize = 50;

/// The decoder inputs used for a conversion, kept for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct ConversionTrace {
    /// Quantized content of the source.
    pub content: Array2<f64>,
    /// Speaker vector of the target.
    pub speaker: Array1<f64>,
    pub decoder_input: Array2<f64>,
    pub output: Array2<f64>,
}

/// Converts normalized features: `decode(C_source + S_target)`.
pub fn convert_traced(model: &Model, source: &Array2<f64>, target: &Array2<f64>) -> Result<ConversionTrace> {
    let content = model.analyze(source)?.content;
    let speaker = model.analyze(target)?.speaker;
    let decoder_input = model.decoder_input(&content, &speaker)?;
    let output = model.decode_input(&decoder_input)?;
    Ok(ConversionTrace {
        content,
        speaker,
        decoder_input,
        output,
    })
}

pub fn convert(model: &Model, source: &Array2<f64>, target: &Array2<f64>) -> Result<Array2<f64>> {
    Ok(convert_traced(model, source, target)?.output)
}

/// A source/target pair of log-mel spectrograms to convert with a checkpoint.
#[derive(Debug, Clone)]
pub struct ConversionRequest {
    pub source: MelSpectrogram,
    pub target: MelSpectrogram,
}

impl ConversionRequest {
    fn check(&self, ckpt: &Checkpoint) -> Result<()> {
        for (role, mel) in [("source", &self.source), ("target", &self.target)] {
            if mel.config != ckpt.frontend {
                return Err(Error::Compatibility(format!(
                    "{role} features were extracted with [{}] but the checkpoint expects [{}]",
                    mel.config, ckpt.frontend
                )));
            }
            if mel.frames.ncols() != ckpt.model.config.n_mels {
                return Err(Error::Compatibility(format!(
                    "{role} has {} feature columns, the checkpoint model expects {}",
                    mel.frames.ncols(),
                    ckpt.model.config.n_mels
                )));
            }
        }
        Ok(())
    }

    /// Normalizes both inputs with the checkpoint statistics, converts, and
    /// maps the result back to log-mel values.
    pub fn run(&self, ckpt: &Checkpoint) -> Result<MelSpectrogram> {
        self.check(ckpt)?;
        let source = ckpt.stats.normalize(&self.source.frames);
        let target = ckpt.stats.normalize(&self.target.frames);
        let out = convert(&ckpt.model, &source, &target)?;
        Ok(MelSpectrogram {
            frames: ckpt.stats.denormalize(&out),
            config: ckpt.frontend.clone(),
            speaker_id: self.target.speaker_id.clone(),
            utterance_id: format!("{}_as_{}", self.source.utterance_id, self.target.speaker_id),
        })
    }
}

/// Linear-frequency magnitudes (`T x bins`) whose mel projection best matches
/// `mel_mag` under a non-negativity constraint (multiplicative updates).
fn mel_to_linear(mel_mag: &Array2<f64>, config: &FrontendConfig) -> Array2<f64> {
    let fb = mel_filterbank(config);
    let col_sums = fb.sum_axis(Axis(0));
    let numerator = mel_mag.dot(&fb);
    let mut spec = numerator.clone();
    for mut row in spec.rows_mut() {
        for (v, &c) in row.iter_mut().zip(col_sums.iter()) {
            *v = if c > 0.0 { *v / (c * c) } else { 0.0 };
        }
    }
    let gram = fb.t().dot(&fb);
    for _ in 0..NNLS_ITERS {
        let denom = spec.dot(&gram);
        ndarray::Zip::from(&mut spec)
            .and(&numerator)
            .and(&denom)
            .for_each(|s, &n, &d| *s *= n / (d + 1e-12));
    }
    spec
}

/// Griffin-Lim phase reconstruction from log-mel frames. Phases start from a
/// fixed seed, so the output is deterministic.
pub fn synthesize_waveform(mel: &Array2<f64>, config: &FrontendConfig, iterations: usize) -> Result<AudioClip> {
    config.validate()?;
    if mel.ncols() != config.n_mels {
        return Err(Error::Shape(format!(
            "mel has {} bands, frontend has {}",
            mel.ncols(),
            config.n_mels
        )));
    }
    if mel.nrows() == 0 {
        return Err(Error::EmptyInput("mel has no frames".into()));
    }
    let length = (mel.nrows() - 1) * config.hop_size;
    let floor = config.log_floor.ln();
    if mel.iter().all(|&v| v <= floor + 1e-9) {
        log::warn!("mel is at the log floor everywhere; emitting silence");
        return Ok(AudioClip::new(vec![0.0; length], "", ""));
    }

    let magnitude = mel_to_linear(&mel.mapv(f64::exp), config);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut phase = magnitude.mapv(|_| rng.gen_range(0.0..std::f64::consts::TAU));
    let combine = |phase: &Array2<f64>| {
        let mut spec = Array2::zeros(magnitude.dim());
        ndarray::Zip::from(&mut spec)
            .and(&magnitude)
            .and(phase)
            .for_each(|s: &mut Complex64, &m, &p| *s = Complex64::from_polar(m, p));
        spec
    };
    let mut signal = istft(&combine(&phase), config, length);
    for _ in 0..iterations {
        let rebuilt = stft(&signal, config);
        phase = rebuilt.mapv(|c| c.arg());
        signal = istft(&combine(&phase), config, length);
    }
    let samples = signal.iter().map(|&s| s.clamp(-1.0, 1.0) as f32).collect();
    Ok(AudioClip::new(samples, "", ""))
}
