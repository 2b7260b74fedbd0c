//! Encoder, codebook and decoder.
//!
//! The encoder and decoder are stacks of same-padded time convolutions with
//! leaky-ReLU between layers, so `T` input frames always map to `T` output
//! frames. For an utterance `x`:
//!
//! ```text
//! latent  = enc(x)                      T x D
//! content = VQ(latent)                  T x D, rows are codebook entries
//! speaker = mean_t(latent - content)    D
//! x_hat   = dec(content + speaker)      speaker added to every frame
//! ```

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::vq::{self, check_finite, init_codebook, Codebook};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Feature columns of the input and output (80 for log-mel input).
    pub n_mels: usize,
    pub latent_dim: usize,
    pub encoder_layers: usize,
    pub encoder_width: usize,
    pub decoder_layers: usize,
    pub decoder_width: usize,
    /// Odd kernel width of every convolution.
    pub kernel_size: usize,
    pub codebook_size: usize,
    pub leaky_slope: f64,
    /// Init scale of the encoder's output layer; 0 starts every latent at the origin.
    pub encoder_output_gain: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_mels: 80,
            latent_dim: 64,
            encoder_layers: 3,
            encoder_width: 256,
            decoder_layers: 3,
            decoder_width: 256,
            kernel_size: 5,
            codebook_size: vq::DEFAULT_CODEBOOK_SIZE,
            leaky_slope: 0.2,
            encoder_output_gain: 0.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("n_mels", self.n_mels),
            ("latent_dim", self.latent_dim),
            ("encoder_layers", self.encoder_layers),
            ("encoder_width", self.encoder_width),
            ("decoder_layers", self.decoder_layers),
            ("decoder_width", self.decoder_width),
            ("codebook_size", self.codebook_size),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.encoder_output_gain >= 0.0 && self.encoder_output_gain.is_finite()) {
            return Err(Error::Config(format!(
                "encoder_output_gain must be finite and non-negative, got {}",
                self.encoder_output_gain
            )));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!("kernel_size must be odd, got {}", self.kernel_size)));
        }
        Ok(())
    }

    fn stack_dims(input: usize, width: usize, output: usize, layers: usize) -> Vec<(usize, usize)> {
        (0..layers)
            .map(|l| {
                let cin = if l == 0 { input } else { width };
                let cout = if l + 1 == layers { output } else { width };
                (cin, cout)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    /// `(kernel * C_in) x C_out`
    pub weight: Array2<f64>,
    /// `1 x C_out`
    pub bias: Array2<f64>,
    pub kernel: usize,
}

impl ConvLayer {
    fn init(rng: &mut ChaCha8Rng, cin: usize, cout: usize, kernel: usize, gain: f64) -> Self {
        let fan_in = (kernel * cin) as f64;
        let bound = gain * (3.0 / fan_in).sqrt();
        Self {
            weight: if bound > 0.0 {
                Array2::from_shape_fn((kernel * cin, cout), |_| rng.gen_range(-bound..bound))
            } else {
                Array2::zeros((kernel * cin, cout))
            },
            bias: Array2::zeros((1, cout)),
            kernel,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.nrows() / self.kernel
    }

    pub fn out_channels(&self) -> usize {
        self.weight.ncols()
    }
}

/// Continuous latent, its quantization and the speaker vector for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBundle {
    pub latent: Array2<f64>,
    pub content: Array2<f64>,
    pub speaker: Array1<f64>,
    pub indices: Vec<usize>,
}

/// Parameter handles registered on a tape for one forward pass.
#[derive(Debug, Clone)]
pub struct ParamVars {
    encoder: Vec<(Var, Var)>,
    decoder: Vec<(Var, Var)>,
    pub codebook: Var,
}

/// Tape handles of a decomposition.
#[derive(Debug, Clone)]
pub struct LatentVars {
    pub latent: Var,
    /// Straight-through content used on the decoding path.
    pub content: Var,
    /// Codebook rows gathered for the latent loss; gradients reach the codebook.
    pub codes: Var,
    /// `1 x D`; the quantized frames are constants here.
    pub speaker: Var,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: Vec<ConvLayer>,
    pub decoder: Vec<ConvLayer>,
    pub codebook: Codebook,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let relu_gain = (2.0 / (1.0 + config.leaky_slope * config.leaky_slope)).sqrt();
        let mut build = |dims: Vec<(usize, usize)>, output_gain: f64| -> Vec<ConvLayer> {
            let n = dims.len();
            dims.into_iter()
                .enumerate()
                .map(|(l, (cin, cout))| {
                    let gain = if l + 1 == n { output_gain } else { relu_gain };
                    ConvLayer::init(&mut rng, cin, cout, config.kernel_size, gain)
                })
                .collect()
        };
        let encoder = build(ModelConfig::stack_dims(
            config.n_mels,
            config.encoder_width,
            config.latent_dim,
            config.encoder_layers,
        ), config.encoder_output_gain);
        let decoder = build(ModelConfig::stack_dims(
            config.latent_dim,
            config.decoder_width,
            config.n_mels,
            config.decoder_layers,
        ), 1.0);
        let codebook = init_codebook(config.codebook_size, config.latent_dim, config.seed.wrapping_add(1))?;
        Ok(Self {
            config,
            encoder,
            decoder,
            codebook,
        })
    }

    /// All trainable tensors in a fixed order: encoder (weight, bias) pairs,
    /// decoder pairs, then the codebook.
    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut out: Vec<&Array2<f64>> = Vec::new();
        for l in self.encoder.iter().chain(&self.decoder) {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.push(self.codebook.entries());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out: Vec<&mut Array2<f64>> = Vec::new();
        for l in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(self.codebook.entries_mut());
        out
    }

    pub fn codebook_index(&self) -> usize {
        2 * (self.encoder.len() + self.decoder.len())
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        let mut next = 0;
        let mut reg = |tape: &mut Tape, layers: &[ConvLayer]| -> Vec<(Var, Var)> {
            layers
                .iter()
                .map(|l| {
                    let w = tape.param(next, l.weight.clone());
                    let b = tape.param(next + 1, l.bias.clone());
                    next += 2;
                    (w, b)
                })
                .collect()
        };
        let encoder = reg(tape, &self.encoder);
        let decoder = reg(tape, &self.decoder);
        let codebook = tape.param(self.codebook_index(), self.codebook.entries().clone());
        ParamVars {
            encoder,
            decoder,
            codebook,
        }
    }

    fn run_stack(&self, tape: &mut Tape, layers: &[ConvLayer], vars: &[(Var, Var)], x: Var) -> Var {
        let mut h = x;
        for (l, (layer, &(w, b))) in layers.iter().zip(vars).enumerate() {
            h = tape.conv1d(h, w, b, layer.kernel);
            if l + 1 < layers.len() {
                h = tape.leaky_relu(h, self.config.leaky_slope);
            }
        }
        h
    }

    pub fn encode_var(&self, tape: &mut Tape, vars: &ParamVars, x: Var) -> Var {
        self.run_stack(tape, &self.encoder, &vars.encoder, x)
    }

    pub fn decompose_var(&self, tape: &mut Tape, vars: &ParamVars, latent: Var) -> Result<LatentVars> {
        let q = vq::quantize(tape.value(latent), &self.codebook)?;
        let codes = tape.gather(vars.codebook, &q.indices);
        let content = tape.straight_through(latent, q.quantized.clone());
        let fixed = tape.constant(q.quantized);
        let residual = tape.sub(latent, fixed);
        let speaker = tape.mean_rows(residual);
        Ok(LatentVars {
            latent,
            content,
            codes,
            speaker,
            indices: q.indices,
        })
    }

    pub fn decoder_input_var(&self, tape: &mut Tape, content: Var, speaker: Var) -> Var {
        tape.add_row(content, speaker)
    }

    pub fn decode_var(&self, tape: &mut Tape, vars: &ParamVars, content: Var, speaker: Var) -> Var {
        let input = self.decoder_input_var(tape, content, speaker);
        self.run_stack(tape, &self.decoder, &vars.decoder, input)
    }

    fn check_input(&self, mel: &Array2<f64>) -> Result<()> {
        if mel.ncols() != self.config.n_mels {
            return Err(Error::Shape(format!(
                "input has {} columns, model expects {}",
                mel.ncols(),
                self.config.n_mels
            )));
        }
        if mel.nrows() == 0 {
            return Err(Error::Shape("input has no frames".into()));
        }
        check_finite(mel, "input features")
    }

    pub fn encode(&self, mel: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(mel)?;
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let x = tape.constant(mel.clone());
        let latent = self.encode_var(&mut tape, &vars, x);
        let out = tape.value(latent).clone();
        check_finite(&out, "latent")?;
        Ok(out)
    }

    pub fn decompose(&self, latent: &Array2<f64>) -> Result<LatentBundle> {
        let q = vq::quantize(latent, &self.codebook)?;
        let speaker = (latent - &q.quantized)
            .mean_axis(Axis(0))
            .ok_or_else(|| Error::Shape("latent has no frames".into()))?;
        Ok(LatentBundle {
            latent: latent.clone(),
            content: q.quantized,
            speaker,
            indices: q.indices,
        })
    }

    pub fn analyze(&self, mel: &Array2<f64>) -> Result<LatentBundle> {
        self.decompose(&self.encode(mel)?)
    }

    /// The decoder's input: `speaker` added to every content frame.
    pub fn decoder_input(&self, content: &Array2<f64>, speaker: &Array1<f64>) -> Result<Array2<f64>> {
        let d = self.config.latent_dim;
        if content.ncols() != d || speaker.len() != d {
            return Err(Error::Shape(format!(
                "decoder expects width {d}, got content {} and speaker {}",
                content.ncols(),
                speaker.len()
            )));
        }
        Ok(content + speaker)
    }

    /// Runs the decoder stack on a prepared decoder input.
    pub fn decode_input(&self, input: &Array2<f64>) -> Result<Array2<f64>> {
        if input.ncols() != self.config.latent_dim {
            return Err(Error::Shape(format!(
                "decoder input has {} columns, expected {}",
                input.ncols(),
                self.config.latent_dim
            )));
        }
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let x = tape.constant(input.clone());
        let out = self.run_stack(&mut tape, &self.decoder, &vars.decoder, x);
        let out = tape.value(out).clone();
        check_finite(&out, "decoder output")?;
        Ok(out)
    }

    pub fn decode(&self, content: &Array2<f64>, speaker: &Array1<f64>) -> Result<Array2<f64>> {
        self.decode_input(&self.decoder_input(content, speaker)?)
    }

    pub fn self_reconstruct(&self, mel: &Array2<f64>) -> Result<Array2<f64>> {
        let bundle = self.analyze(mel)?;
        self.decode(&bundle.content, &bundle.speaker)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn tiny() -> Model {
        Model::new(ModelConfig {
            n_mels: 6,
            latent_dim: 4,
            encoder_layers: 2,
            encoder_width: 8,
            decoder_layers: 2,
            decoder_width: 8,
            kernel_size: 3,
            codebook_size: 8,
            leaky_slope: 0.2,
            encoder_output_gain: 1.0,
            seed: 3,
        })
        .unwrap()
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn encode_shape_and_determinism() {
        let m = tiny();
        let x = random(10, 6, 1);
        let a = m.encode(&x).unwrap();
        assert_eq!(a.dim(), (10, 4));
        assert_eq!(a, m.encode(&x).unwrap());
        assert!(matches!(m.encode(&random(10, 5, 1)), Err(Error::Shape(_))));
    }

    #[test]
    fn zeroed_final_layer_gives_zero_latent() {
        let m = Model::new(ModelConfig {
            encoder_output_gain: 0.0,
            ..tiny().config
        })
        .unwrap();
        assert!(m.encode(&random(7, 6, 2)).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn latent_on_a_code_has_zero_speaker() {
        let m = tiny();
        let entry = m.codebook.entries().row(5).to_owned();
        let latent = Array2::from_shape_fn((6, 4), |(_, j)| entry[j]);
        let b = m.decompose(&latent).unwrap();
        assert!(b.speaker.iter().all(|&v| v == 0.0));
        assert_eq!(b.indices, vec![5; 6]);
    }

    #[test]
    fn constant_shift_is_recovered_as_speaker() {
        let m = tiny();
        let entries = m.codebook.entries();
        // Half the smallest inter-entry distance bounds a shift that keeps every
        // frame on its own entry.
        let mut min_gap = f64::INFINITY;
        for a in 0..entries.nrows() {
            for b in a + 1..entries.nrows() {
                let d = (&entries.row(a) - &entries.row(b)).mapv(|v| v * v).sum().sqrt();
                min_gap = min_gap.min(d);
            }
        }
        let c = Array1::from_vec(vec![0.3, -0.2, 0.1, 0.25]);
        let c = &c * (0.45 * min_gap / c.mapv(|v: f64| v * v).sum().sqrt());
        let picks = [1usize, 1, 4, 7, 2];
        let latent = Array2::from_shape_fn((picks.len(), 4), |(t, j)| entries[[picks[t], j]] + c[j]);
        let b = m.decompose(&latent).unwrap();
        assert_eq!(b.indices, picks.to_vec());
        for (s, e) in b.speaker.iter().zip(c.iter()) {
            assert!((s - e).abs() < 1e-12);
        }
    }

    #[test]
    fn decode_runs_on_content_plus_speaker() {
        let m = tiny();
        let content = random(5, 4, 9);
        let speaker = Array1::from_vec(vec![0.5, -1.0, 0.25, 2.0]);
        let direct = m.decode(&content, &speaker).unwrap();
        let tapped = m.decoder_input(&content, &speaker).unwrap();
        for t in 0..5 {
            for j in 0..4 {
                assert_eq!(tapped[[t, j]], content[[t, j]] + speaker[j]);
            }
        }
        assert_eq!(direct, m.decode_input(&tapped).unwrap());
        assert_eq!(m.decode(&random(1, 4, 2), &speaker).unwrap().nrows(), 1);
    }

    #[test]
    fn self_reconstruct_shape() {
        let m = tiny();
        let x = random(12, 6, 4);
        let y = m.self_reconstruct(&x).unwrap();
        assert_eq!(y.dim(), x.dim());
        assert_eq!(y, m.self_reconstruct(&x).unwrap());
    }

    #[test]
    fn default_parameter_count_is_millions() {
        let m = Model::new(ModelConfig::default()).unwrap();
        let n = m.parameter_count();
        assert!((1_000_000..20_000_000).contains(&n), "{n}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn decompose_is_exact(seed in 0u64..500, t in 1usize..16) {
            let m = tiny();
            let latent = random(t, 4, seed);
            let b = m.decompose(&latent).unwrap();
            let residual = &b.latent - &b.content;
            let mean = residual.mean_axis(Axis(0)).unwrap();
            prop_assert_eq!(&mean, &b.speaker);
            let err = (&(&b.content + &residual) - &latent).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b));
            prop_assert!(err <= 1e-12, "content + residual misses latent by {}", err);
            for (r, &k) in b.content.rows().into_iter().zip(&b.indices) {
                prop_assert_eq!(r, m.codebook.entries().row(k));
            }
        }

        #[test]
        fn speaker_is_permutation_invariant(seed in 0u64..500) {
            let m = tiny();
            let latent = random(9, 4, seed);
            let mut order: Vec<usize> = (0..9).collect();
            order.reverse();
            order.swap(0, 4);
            let permuted = latent.select(Axis(0), &order);
            let a = m.decompose(&latent).unwrap().speaker;
            let b = m.decompose(&permuted).unwrap().speaker;
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn ops_preserve_frame_count(t in 1usize..40) {
            let m = tiny();
            let x = random(t, 6, t as u64);
            prop_assert_eq!(m.encode(&x).unwrap().nrows(), t);
            prop_assert_eq!(m.self_reconstruct(&x).unwrap().nrows(), t);
        }
    }
}
