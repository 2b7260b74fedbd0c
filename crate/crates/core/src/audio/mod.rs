//! Waveform ingestion and log-mel feature extraction.
//!
//! The extraction parameters default to 16 kHz audio, a 1024-point FFT with a
//! 1024-sample Hann window, a hop of 256 samples and 80 mel bands spanning
//! 90 Hz to 7.6 kHz. Frames are computed with reflection center-padding, so a
//! clip of `n` samples yields `1 + n / hop_size` frames.

mod mel;
mod resample;
mod stft;
mod wav;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use mel::{compute_mel, mel_band_centers, mel_filterbank, mel_to_hz, hz_to_mel};
pub use resample::resample;
pub use stft::{istft, stft, Spectrogram};
pub use wav::{load_audio, write_wav};

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Hann,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            // Periodic Hann, the usual choice for STFT analysis.
            Window::Hann => (0..len)
                .map(|n| {
                    0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos()
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrontendConfig {
    pub fft_size: usize,
    pub window_size: usize,
    pub hop_size: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub sample_rate: u32,
    pub window: Window,
    /// Mel magnitudes are clamped to this value before the natural log.
    pub log_floor: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            fft_size: 1024,
            window_size: 1024,
            hop_size: 256,
            n_mels: 80,
            fmin: 90.0,
            fmax: 7600.0,
            sample_rate: SAMPLE_RATE,
            window: Window::Hann,
            log_floor: 1e-5,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_mels == 0 {
            return fail("n_mels must be at least 1".into());
        }
        if !(self.hop_size >= 1 && self.hop_size <= self.window_size && self.window_size <= self.fft_size) {
            return fail(format!(
                "need 1 <= hop_size ({}) <= window_size ({}) <= fft_size ({})",
                self.hop_size, self.window_size, self.fft_size
            ));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.sample_rate as f64 / 2.0) {
            return fail(format!(
                "need 0 <= fmin ({}) < fmax ({}) <= sample_rate/2 ({})",
                self.fmin,
                self.fmax,
                self.sample_rate as f64 / 2.0
            ));
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return fail(format!("log_floor must be positive, got {}", self.log_floor));
        }
        Ok(())
    }

    /// Number of frames produced for a clip of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        1 + len / self.hop_size
    }

    pub fn log_floor_value(&self) -> f64 {
        self.log_floor.ln()
    }

    /// Plain `key = value` record used as the sidecar next to cached features.
    pub fn to_sidecar(&self) -> String {
        format!(
            "fft_size = {}\nwindow_size = {}\nhop_size = {}\nn_mels = {}\nfmin = {:?}\nfmax = {:?}\nsample_rate = {}\nwindow = \"hann\"\nlog_floor = {:?}\n",
            self.fft_size,
            self.window_size,
            self.hop_size,
            self.n_mels,
            self.fmin,
            self.fmax,
            self.sample_rate,
            self.log_floor
        )
    }

    pub fn from_sidecar(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("frontend sidecar: {}", e.message())))
    }
}

impl fmt::Display for FrontendConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "fft={} win={} hop={} mels={} fmin={} fmax={} sr={}",
            self.fft_size, self.window_size, self.hop_size, self.n_mels, self.fmin, self.fmax, self.sample_rate
        )
    }
}

impl FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hann" => Ok(Window::Hann),
            other => Err(Error::Config(format!("unknown window {other:?}"))),
        }
    }
}

/// A mono waveform at [`SAMPLE_RATE`].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub speaker_id: String,
    pub utterance_id: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, speaker_id: impl Into<String>, utterance_id: impl Into<String>) -> Self {
        Self {
            samples,
            sample_rate: SAMPLE_RATE,
            speaker_id: speaker_id.into(),
            utterance_id: utterance_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Log-mel frames (`T x n_mels`) plus the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Array2<f64>,
    pub config: FrontendConfig,
    pub speaker_id: String,
    pub utterance_id: String,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }
}
