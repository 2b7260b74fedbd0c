//! Codebook lookup.
//!
//! Every latent frame is replaced by its nearest codebook entry under squared
//! Euclidean distance; equidistant entries resolve to the lowest index. In a
//! training graph the lookup is straight-through: gradients arriving at the
//! quantized frames are copied unchanged onto the latent frames, and the
//! codebook itself is only reached through [`latent_loss`]. See
//! [`crate::autodiff::Tape::quantize`].

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CODEBOOK_SIZE: usize = 512;

/// Standard deviation of freshly initialized codebook entries.
pub const INIT_STD: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    entries: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationResult {
    pub indices: Vec<usize>,
    pub quantized: Array2<f64>,
}

impl Codebook {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::Config("codebook needs at least one entry and one dimension".into()));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("codebook entries must be finite".into()));
        }
        Ok(Self { entries })
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn dim(&self) -> usize {
        self.entries.ncols()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub(crate) fn entries_mut(&mut self) -> &mut Array2<f64> {
        &mut self.entries
    }

    /// Index of the entry closest to `v`; ties go to the lowest index.
    pub fn nearest(&self, v: ArrayView1<f64>) -> usize {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (k, entry) in self.entries.rows().into_iter().enumerate() {
            let d: f64 = entry.iter().zip(v.iter()).map(|(q, x)| (x - q) * (x - q)).sum();
            if d < best_dist {
                best_dist = d;
                best = k;
            }
        }
        best
    }

    /// Appends entries, e.g. to grow a codebook between experiments.
    pub fn with_appended(&self, extra: ArrayView2<'_, f64>) -> Result<Self> {
        if extra.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "appended entries have {} columns, codebook has {}",
                extra.ncols(),
                self.dim()
            )));
        }
        let joined = ndarray::concatenate(ndarray::Axis(0), &[self.entries.view(), extra.reborrow()])
            .map_err(|e| Error::Shape(e.to_string()))?;
        Codebook::new(joined)
    }
}

pub fn init_codebook(size: usize, dim: usize, seed: u64) -> Result<Codebook> {
    if size == 0 || dim == 0 {
        return Err(Error::Config(format!("codebook shape ({size}, {dim}) must be non-empty")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = Array2::from_shape_fn((size, dim), |_| INIT_STD * rng.sample::<f64, _>(StandardNormal));
    Codebook::new(entries)
}

pub(crate) fn check_finite(m: &Array2<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} contains non-finite values")))
    }
}

pub fn quantize(latent: &Array2<f64>, codebook: &Codebook) -> Result<QuantizationResult> {
    if latent.ncols() != codebook.dim() {
        return Err(Error::Shape(format!(
            "latent has {} columns, codebook dimension is {}",
            latent.ncols(),
            codebook.dim()
        )));
    }
    check_finite(latent, "latent")?;
    let indices: Vec<usize> = latent.rows().into_iter().map(|row| codebook.nearest(row)).collect();
    let quantized = codebook.entries.select(ndarray::Axis(0), &indices);
    Ok(QuantizationResult { indices, quantized })
}

/// Mean over frames of the squared distance between latent and quantized rows.
pub fn latent_loss(latent: &Array2<f64>, quantized: &Array2<f64>) -> Result<f64> {
    if latent.dim() != quantized.dim() {
        return Err(Error::Shape(format!(
            "latent {:?} vs quantized {:?}",
            latent.dim(),
            quantized.dim()
        )));
    }
    if latent.nrows() == 0 {
        return Ok(0.0);
    }
    let total: f64 = latent
        .iter()
        .zip(quantized.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(total / latent.nrows() as f64)
}
