use ndarray::Array2;

use super::{stft, AudioClip, FrontendConfig, MelSpectrogram};
use crate::error::{Error, Result};

const LINEAR_HZ_PER_MEL: f64 = 200.0 / 3.0;
const BREAK_HZ: f64 = 1000.0;
const BREAK_MEL: f64 = BREAK_HZ / LINEAR_HZ_PER_MEL;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    if hz < BREAK_HZ {
        hz / LINEAR_HZ_PER_MEL
    } else {
        BREAK_MEL + (hz / BREAK_HZ).ln() / log_step()
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel < BREAK_MEL {
        mel * LINEAR_HZ_PER_MEL
    } else {
        BREAK_HZ * (log_step() * (mel - BREAK_MEL)).exp()
    }
}

/// The `n_mels + 2` band edge frequencies, evenly spaced on the mel scale.
fn band_edges(config: &FrontendConfig) -> Vec<f64> {
    let lo = hz_to_mel(config.fmin);
    let hi = hz_to_mel(config.fmax);
    let n = config.n_mels + 2;
    (0..n)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n - 1) as f64))
        .collect()
}

/// Peak frequency (Hz) of every mel band.
pub fn mel_band_centers(config: &FrontendConfig) -> Vec<f64> {
    let edges = band_edges(config);
    edges[1..=config.n_mels].to_vec()
}

/// Triangular filters, `n_mels x (fft_size / 2 + 1)`, each scaled to unit area
/// (`2 / bandwidth`).
pub fn mel_filterbank(config: &FrontendConfig) -> Array2<f64> {
    let n_bins = config.fft_size / 2 + 1;
    let edges = band_edges(config);
    let bin_hz = config.sample_rate as f64 / config.fft_size as f64;
    let mut fb = Array2::zeros((config.n_mels, n_bins));
    for m in 0..config.n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let scale = 2.0 / (hi - lo);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let rising = (f - lo) / (center - lo);
            let falling = (hi - f) / (hi - center);
            fb[[m, k]] = rising.min(falling).max(0.0) * scale;
        }
    }
    fb
}

/// Log-mel spectrogram of a clip.
pub fn compute_mel(clip: &AudioClip, config: &FrontendConfig) -> Result<MelSpectrogram> {
    config.validate()?;
    if clip.sample_rate != config.sample_rate {
        return Err(Error::Compatibility(format!(
            "clip is {} Hz but the frontend expects {} Hz",
            clip.sample_rate, config.sample_rate
        )));
    }
    if clip.len() < config.window_size {
        return Err(Error::TooShort {
            len: clip.len(),
            needed: config.window_size,
        });
    }
    let signal: Vec<f64> = clip.samples.iter().map(|&s| s as f64).collect();
    let magnitude = stft(&signal, config).mapv(|c| c.norm());
    let fb = mel_filterbank(config);
    let floor = config.log_floor;
    let frames = magnitude.dot(&fb.t()).mapv(|m| m.max(floor).ln());
    Ok(MelSpectrogram {
        frames,
        config: config.clone(),
        speaker_id: clip.speaker_id.clone(),
        utterance_id: clip.utterance_id.clone(),
    })
}
