use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{resample, AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Reads a mono PCM or float WAV file.
///
/// Integer samples are divided by the largest positive code (`2^(bits-1) - 1`)
/// and clamped, so a full-scale signal peaks at exactly 1.0. Input at any other
/// rate is resampled to 16 kHz. The speaker id is the parent directory name and
/// the utterance id is the file stem.
pub fn load_audio(path: &Path) -> Result<AudioClip> {
    let decode_err = |reason: String| Error::Decode {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = WavReader::open(path).map_err(|e| decode_err(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(decode_err(format!(
            "expected mono audio, found {} channels",
            spec.channels
        )));
    }
    let samples: Vec<f32> = match spec.sample_format {
        SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v.clamp(-1.0, 1.0)))
            .collect::<Result<_, _>>()
            .map_err(|e| decode_err(e.to_string()))?,
        SampleFormat::Int => {
            let full_scale = ((1i64 << (spec.bits_per_sample - 1)) - 1) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| (v as f32 / full_scale).clamp(-1.0, 1.0)))
                .collect::<Result<_, _>>()
                .map_err(|e| decode_err(e.to_string()))?
        }
    };
    if samples.is_empty() {
        return Err(Error::EmptyInput(format!("{} has no samples", path.display())));
    }
    let samples = resample(&samples, spec.sample_rate, SAMPLE_RATE);

    let utterance_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let speaker_id = path
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(AudioClip {
        samples,
        sample_rate: SAMPLE_RATE,
        speaker_id,
        utterance_id,
    })
}

/// Writes a clip as 16-bit PCM.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let to_io = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Decode {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    };
    let mut writer = WavWriter::create(path, spec).map_err(to_io)?;
    for &s in &clip.samples {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16;
        writer.write_sample(v).map_err(to_io)?;
    }
    writer.finalize().map_err(to_io)
}
