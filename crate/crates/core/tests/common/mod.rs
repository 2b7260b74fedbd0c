//! Independent reference implementations shared by the integration tests.
//!
//! Everything here uses plain nested loops over `Vec<f64>` rows so it shares
//! no arithmetic with the library's ndarray code paths.
#![allow(dead_code)]

use avqvc::losses::{LossParts, LossWeights};
use avqvc::model::{Model, ModelConfig};
use avqvc::training::triplet_objective;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(a: &Array2<f64>) -> Mat {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

/// Nearest codebook row by exhaustive search; the first minimum wins.
pub fn brute_force_nearest(latent: &Mat, codebook: &Mat) -> Vec<usize> {
    latent
        .iter()
        .map(|z| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, e) in codebook.iter().enumerate() {
                let d: f64 = z.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// "Same"-padded 1-D convolution. `w` rows are indexed `tap * c_in + channel`.
fn conv(x: &Mat, w: &Mat, b: &[f64], kernel: usize) -> Mat {
    let t_len = x.len();
    let c_in = x[0].len();
    let c_out = b.len();
    let left = (kernel - 1) / 2;
    let mut y = vec![vec![0.0; c_out]; t_len];
    for t in 0..t_len {
        for o in 0..c_out {
            let mut acc = b[o];
            for j in 0..kernel {
                let src = t as isize + j as isize - left as isize;
                if src < 0 || src >= t_len as isize {
                    continue;
                }
                for c in 0..c_in {
                    acc += x[src as usize][c] * w[j * c_in + c][o];
                }
            }
            y[t][o] = acc;
        }
    }
    y
}

fn stack(x: &Mat, layers: &[(Mat, Vec<f64>)], kernel: usize, slope: f64) -> Mat {
    let mut h = x.clone();
    for (l, (w, b)) in layers.iter().enumerate() {
        h = conv(&h, w, b, kernel);
        if l + 1 < layers.len() {
            for row in &mut h {
                for v in row.iter_mut() {
                    if *v < 0.0 {
                        *v *= slope;
                    }
                }
            }
        }
    }
    h
}

fn mean_abs(a: &Mat, b: &Mat) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for (ra, rb) in a.iter().zip(b) {
        for (x, y) in ra.iter().zip(rb) {
            s += (x - y).abs();
            n += 1;
        }
    }
    s / n as f64
}

fn mean_abs_vec(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Parameters unpacked into plain rows, in the model's tensor order.
pub struct Params {
    pub encoder: Vec<(Mat, Vec<f64>)>,
    pub decoder: Vec<(Mat, Vec<f64>)>,
    pub codebook: Mat,
}

impl Params {
    pub fn from_tensors(tensors: &[Array2<f64>], enc_layers: usize, dec_layers: usize) -> Self {
        let layer = |i: usize| (to_mat(&tensors[2 * i]), tensors[2 * i + 1].row(0).to_vec());
        Self {
            encoder: (0..enc_layers).map(layer).collect(),
            decoder: (enc_layers..enc_layers + dec_layers).map(layer).collect(),
            codebook: to_mat(&tensors[2 * (enc_layers + dec_layers)]),
        }
    }
}

/// Values the straight-through surrogate holds fixed: the base-point latent
/// and the base-point quantization of each utterance.
pub struct Frozen {
    pub indices: [Vec<usize>; 3],
    pub base_latent: [Mat; 3],
    pub base_codes: [Mat; 3],
}

pub fn freeze(p: &Params, xs: [&Mat; 3], kernel: usize, slope: f64) -> Frozen {
    let mut indices: [Vec<usize>; 3] = Default::default();
    let mut base_latent: [Mat; 3] = Default::default();
    let mut base_codes: [Mat; 3] = Default::default();
    for i in 0..3 {
        let z = stack(xs[i], &p.encoder, kernel, slope);
        indices[i] = brute_force_nearest(&z, &p.codebook);
        base_codes[i] = indices[i].iter().map(|&k| p.codebook[k].clone()).collect();
        base_latent[i] = z;
    }
    Frozen {
        indices,
        base_latent,
        base_codes,
    }
}

/// Swap-objective loss parts for a triplet, with quantization replaced by its
/// straight-through surrogate around the frozen base point. At the base point
/// the values equal the real objective; its derivative is the gradient the
/// straight-through rule prescribes.
pub fn oracle_parts(p: &Params, xs: [&Mat; 3], f: &Frozen, kernel: usize, slope: f64) -> LossParts {
    let mut content = Vec::new();
    let mut speaker = Vec::new();
    let mut latent_loss = 0.0;
    for i in 0..3 {
        let z = stack(xs[i], &p.encoder, kernel, slope);
        let t_len = z.len();
        let d = z[0].len();
        // content = z + (q0 - z0): value q0, derivative of z.
        let c: Mat = (0..t_len)
            .map(|t| (0..d).map(|j| z[t][j] + (f.base_codes[i][t][j] - f.base_latent[i][t][j])).collect())
            .collect();
        // speaker uses the codes as constants.
        let s: Vec<f64> = (0..d)
            .map(|j| (0..t_len).map(|t| z[t][j] - f.base_codes[i][t][j]).sum::<f64>() / t_len as f64)
            .collect();
        // latent loss reaches the live codebook.
        let mut ll = 0.0;
        for t in 0..t_len {
            let e = &p.codebook[f.indices[i][t]];
            ll += (0..d).map(|j| (z[t][j] - e[j]).powi(2)).sum::<f64>();
        }
        latent_loss += ll / t_len as f64;
        content.push(c);
        speaker.push(s);
    }
    let decode = |c: &Mat, s: &[f64]| {
        let input: Mat = c.iter().map(|row| row.iter().zip(s).map(|(a, b)| a + b).collect()).collect();
        stack(&input, &p.decoder, kernel, slope)
    };
    let y1 = decode(&content[0], &speaker[1]);
    let y2 = decode(&content[1], &speaker[0]);
    let y3 = decode(&content[2], &speaker[2]);
    LossParts {
        recon: mean_abs(&y1, xs[0]) + mean_abs(&y2, xs[1]) + mean_abs(&y3, xs[2]),
        latent: latent_loss,
        speaker: mean_abs_vec(&speaker[1], &speaker[0]),
        diff: -(mean_abs_vec(&speaker[1], &speaker[2]) + mean_abs_vec(&speaker[0], &speaker[2])),
    }
}

pub fn weighted(parts: &LossParts, w: &LossWeights) -> f64 {
    w.recon_weight * parts.recon + w.alpha * parts.latent + w.beta * parts.speaker + w.lambda * parts.diff
}

/// Micro model with `layers` convolutions on each side.
pub fn micro_config(layers: usize) -> ModelConfig {
    ModelConfig {
        n_mels: 5,
        latent_dim: 4,
        encoder_layers: layers,
        encoder_width: 6,
        decoder_layers: layers,
        decoder_width: 6,
        kernel_size: 3,
        codebook_size: 4,
        leaky_slope: 0.2,
        encoder_output_gain: 1.0,
        seed: 3,
    }
}

pub struct GradCheck {
    pub checked: usize,
    pub max_rel_error: f64,
    pub forward_error: f64,
    pub nonzero_checked: usize,
}

/// Compares analytic gradients of the weighted swap objective with central
/// finite differences of the oracle on `n_params` random parameters.
pub fn gradient_check(layers: usize, seed: u64, n_params: usize, h: f64) -> GradCheck {
    let config = micro_config(layers);
    let model = Model::new(config.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<Array2<f64>> = (0..3).map(|_| random_matrix(6, config.n_mels, &mut rng)).collect();
    let weights = LossWeights::default();
    let analytic = triplet_objective(&model, &xs[0], &xs[1], &xs[2], &weights).unwrap();

    let tensors: Vec<Array2<f64>> = model.tensors().into_iter().cloned().collect();
    let (el, dl) = (config.encoder_layers, config.decoder_layers);
    let (k, slope) = (config.kernel_size, config.leaky_slope);
    let xm: Vec<Mat> = xs.iter().map(to_mat).collect();
    let xr = [&xm[0], &xm[1], &xm[2]];
    let base = Params::from_tensors(&tensors, el, dl);
    let frozen = freeze(&base, xr, k, slope);
    let base_parts = oracle_parts(&base, xr, &frozen, k, slope);
    let forward_error = [
        (base_parts.recon, analytic.parts.recon),
        (base_parts.latent, analytic.parts.latent),
        (base_parts.speaker, analytic.parts.speaker),
        (base_parts.diff, analytic.parts.diff),
    ]
    .iter()
    .map(|(a, b)| (a - b).abs())
    .fold(0.0, f64::max);

    // Codebook rows never selected have zero gradient; draw codebook probes
    // from selected rows so the check exercises the latent-loss path.
    let cb = tensors.len() - 1;
    let used: Vec<usize> = frozen.indices.iter().flatten().copied().collect();
    let mut max_rel: f64 = 0.0;
    let mut nonzero = 0;
    for n in 0..n_params {
        let (ti, r, c) = if n % 5 == 4 {
            (cb, used[rng.gen_range(0..used.len())], rng.gen_range(0..config.latent_dim))
        } else {
            let ti = rng.gen_range(0..cb);
            let (rows, cols) = tensors[ti].dim();
            (ti, rng.gen_range(0..rows), rng.gen_range(0..cols))
        };
        let eval = |delta: f64| {
            let mut t = tensors.clone();
            t[ti][[r, c]] += delta;
            weighted(&oracle_parts(&Params::from_tensors(&t, el, dl), xr, &frozen, k, slope), &weights)
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        let a = analytic.grads[ti][[r, c]];
        let scale = a.abs().max(numeric.abs());
        let rel = if scale < 1e-7 { (a - numeric).abs() } else { (a - numeric).abs() / scale };
        if scale >= 1e-7 {
            nonzero += 1;
        }
        max_rel = max_rel.max(rel);
    }
    GradCheck {
        checked: n_params,
        max_rel_error: max_rel,
        forward_error,
        nonzero_checked: nonzero,
    }
}

pub mod protocol {
    //! The desk-scale synthetic training protocol used by the disentanglement,
    //! ablation and reproducibility checks.

    use avqvc::audio::FrontendConfig;
    use avqvc::corpus::Corpus;
    use avqvc::losses::{LossReport, LossWeights};
    use avqvc::model::ModelConfig;
    use avqvc::synthetic::{generate_synthetic_corpus, SyntheticCorpus, SyntheticCorpusSpec};
    use avqvc::training::{Mode, TrainConfig, TrainOutputs, Trainer};

    pub const HELD_OUT_FRACTION: f64 = 0.2;
    pub const SPLIT_SEED: u64 = 0;
    pub const STEPS: u64 = 2000;

    pub fn corpus(seed: u64) -> SyntheticCorpus {
        generate_synthetic_corpus(&SyntheticCorpusSpec {
            n_speakers: 4,
            utterances_per_speaker: 20,
            seed,
            ..SyntheticCorpusSpec::default()
        })
        .unwrap()
    }

    pub fn split(c: &SyntheticCorpus) -> (Corpus, Corpus) {
        c.to_corpus().split_utterances(HELD_OUT_FRACTION, SPLIT_SEED)
    }

    pub fn model_config(seed: u64) -> ModelConfig {
        ModelConfig {
            n_mels: 20,
            latent_dim: 16,
            encoder_layers: 2,
            encoder_width: 32,
            decoder_layers: 2,
            decoder_width: 32,
            kernel_size: 3,
            codebook_size: 32,
            seed,
            ..ModelConfig::default()
        }
    }

    pub fn train_config(seed: u64, mode: Mode, steps: u64) -> TrainConfig {
        TrainConfig {
            steps,
            batch_size: 8,
            learning_rate: 1e-3,
            segment_len: 32,
            seed,
            mode,
            log_every: 0,
            checkpoint_every: 0,
            ..TrainConfig::default()
        }
    }

    pub fn trainer(seed: u64, mode: Mode, steps: u64, train_set: &Corpus) -> Trainer {
        Trainer::new(
            model_config(seed),
            train_config(seed, mode, steps),
            LossWeights::default(),
            FrontendConfig::default(),
            train_set,
        )
        .unwrap()
    }

    /// Trains the protocol model and returns the trainer plus every step's report.
    pub fn run(seed: u64, mode: Mode, steps: u64, train_set: &Corpus) -> (Trainer, Vec<LossReport>) {
        let mut t = trainer(seed, mode, steps, train_set);
        let reports = t.run_until(steps, &TrainOutputs::default()).unwrap();
        (t, reports)
    }
}

/// One VQ test instance: random latent and codebook with duplicated entries
/// and frames placed exactly on, or halfway between, duplicated entries.
pub fn vq_instance(rng: &mut ChaCha8Rng) -> (Array2<f64>, Array2<f64>) {
    let k = rng.gen_range(1..=32);
    let d = rng.gen_range(1..=16);
    let t = rng.gen_range(1..=64);
    let mut entries = random_matrix(k, d, rng);
    if k >= 2 {
        // Duplicate a few rows onto later positions.
        for _ in 0..rng.gen_range(1..=k.min(4)) {
            let src = rng.gen_range(0..k);
            let dst = rng.gen_range(0..k);
            let row = entries.row(src).to_owned();
            entries.row_mut(dst).assign(&row);
        }
    }
    let mut latent = random_matrix(t, d, rng);
    for mut row in latent.rows_mut() {
        match rng.gen_range(0..4) {
            0 => row.assign(&entries.row(rng.gen_range(0..k))),
            1 if k >= 2 => {
                let (a, b) = (rng.gen_range(0..k), rng.gen_range(0..k));
                let mid = (&entries.row(a) + &entries.row(b)) * 0.5;
                row.assign(&mid);
            }
            _ => {}
        }
    }
    (latent, entries)
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn slaney_mel(hz: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = 6.4f64.ln() / 27.0;
    if hz < min_log_hz {
        hz / f_sp
    } else {
        min_log_mel + (hz / min_log_hz).ln() / logstep
    }
}

pub fn slaney_hz(mel: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_mel = 1000.0 / f_sp;
    let logstep = 6.4f64.ln() / 27.0;
    if mel < min_log_mel {
        mel * f_sp
    } else {
        1000.0 * ((mel - min_log_mel) * logstep).exp()
    }
}

/// For a pure tone: (argmax band of the mid frame, band whose center is nearest the tone).
pub fn tone_band(freq: f64) -> (usize, usize) {
    use avqvc::audio::{compute_mel, AudioClip, FrontendConfig};
    let config = FrontendConfig::default();
    let (lo, hi) = (slaney_mel(config.fmin), slaney_mel(config.fmax));
    let centers: Vec<f64> = (1..=config.n_mels)
        .map(|i| slaney_hz(lo + (hi - lo) * i as f64 / (config.n_mels + 1) as f64))
        .collect();
    let nearest = centers
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - freq).abs().partial_cmp(&(b.1 - freq).abs()).unwrap())
        .unwrap()
        .0;
    let samples: Vec<f32> = (0..16_000)
        .map(|i| (0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin()) as f32)
        .collect();
    let mel = compute_mel(&AudioClip::new(samples, "s", "u"), &config).unwrap();
    let mid = mel.frames.row(mel.frames.nrows() / 2);
    let argmax = mid
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0;
    (argmax, nearest)
}
