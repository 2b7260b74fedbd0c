use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::FrontendConfig;

/// Complex short-time spectrum, `T x (fft_size / 2 + 1)`.
pub type Spectrogram = Array2<Complex64>;

fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= len as isize {
        j = period - j;
    }
    j as usize
}

/// Analysis window of `window_size` taps centered inside an `fft_size` frame.
fn padded_window(config: &FrontendConfig) -> Vec<f64> {
    let mut w = vec![0.0; config.fft_size];
    let left = (config.fft_size - config.window_size) / 2;
    for (dst, c) in w[left..left + config.window_size]
        .iter_mut()
        .zip(config.window.coefficients(config.window_size))
    {
        *dst = c;
    }
    w
}

/// Center-padded (reflection) STFT. Frame `t` is centered on sample `t * hop_size`.
pub fn stft(signal: &[f64], config: &FrontendConfig) -> Spectrogram {
    let n_fft = config.fft_size;
    let n_bins = n_fft / 2 + 1;
    let n_frames = config.frame_count(signal.len());
    let pad = (n_fft / 2) as isize;
    let window = padded_window(config);
    let fft = FftPlanner::new().plan_fft_forward(n_fft);

    let mut out = Array2::zeros((n_frames, n_bins));
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for t in 0..n_frames {
        let start = (t * config.hop_size) as isize - pad;
        for (k, slot) in buf.iter_mut().enumerate() {
            let idx = reflect_index(start + k as isize, signal.len());
            *slot = Complex64::new(signal[idx] * window[k], 0.0);
        }
        fft.process(&mut buf);
        for (dst, src) in out.row_mut(t).iter_mut().zip(&buf[..n_bins]) {
            *dst = *src;
        }
    }
    out
}

/// Weighted overlap-add inverse of [`stft`], trimmed to `length` samples.
pub fn istft(spec: &Spectrogram, config: &FrontendConfig, length: usize) -> Vec<f64> {
    let n_fft = config.fft_size;
    let hop = config.hop_size;
    let n_frames = spec.nrows();
    let pad = n_fft / 2;
    let window = padded_window(config);
    let ifft = FftPlanner::new().plan_fft_inverse(n_fft);

    let total = n_fft + hop * n_frames.saturating_sub(1);
    let mut acc = vec![0.0; total];
    let mut norm = vec![0.0; total];
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for t in 0..n_frames {
        let row = spec.row(t);
        for k in 0..n_fft {
            buf[k] = if k < row.len() {
                row[k]
            } else {
                row[n_fft - k].conj()
            };
        }
        // Keep the inverse real: DC and Nyquist bins carry no phase.
        buf[0].im = 0.0;
        if n_fft % 2 == 0 {
            buf[n_fft / 2].im = 0.0;
        }
        ifft.process(&mut buf);
        let offset = t * hop;
        for k in 0..n_fft {
            acc[offset + k] += buf[k].re / n_fft as f64 * window[k];
            norm[offset + k] += window[k] * window[k];
        }
    }
    (0..length)
        .map(|i| {
            let j = i + pad;
            if j < total && norm[j] > 1e-10 {
                acc[j] / norm[j]
            } else {
                0.0
            }
        })
        .collect()
}
