use std::f64::consts::PI;

/// Zero crossings of the sinc kernel on each side of the output instant.
const HALF_TAPS: f64 = 32.0;
/// Cutoff as a fraction of the lower Nyquist rate; leaves a guard band for the window.
const ROLLOFF: f64 = 0.95;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Band-limited resampling with a Hann-windowed sinc kernel.
///
/// The output holds `floor(len * to / from)` samples.
pub fn resample(samples: &[f32], from: u32, to: u32) -> Vec<f32> {
    if from == to || samples.is_empty() {
        return samples.to_vec();
    }
    let ratio = to as f64 / from as f64;
    let out_len = (samples.len() as u64 * to as u64 / from as u64) as usize;
    let cutoff = ratio.min(1.0) * ROLLOFF;
    let half_width = HALF_TAPS / cutoff;

    (0..out_len)
        .map(|n| {
            let t = n as f64 / ratio;
            let lo = ((t - half_width).ceil().max(0.0)) as usize;
            let hi = ((t + half_width).floor() as usize).min(samples.len() - 1);
            let mut acc = 0.0;
            for (k, &x) in samples.iter().enumerate().take(hi + 1).skip(lo) {
                let d = t - k as f64;
                let w = 0.5 + 0.5 * (PI * d / half_width).cos();
                acc += x as f64 * cutoff * sinc(cutoff * d) * w;
            }
            acc.clamp(-1.0, 1.0) as f32
        })
        .collect()
}
