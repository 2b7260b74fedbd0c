//! Objective metrics and the codebook-size sweep.

mod disentangle;
mod mcd;
mod sweep;

pub use disentangle::{disentanglement_score, score_checkpoint, speaker_similarity, DisentanglementScore, FactorModel};
pub use mcd::{dtw_path, mcd, mcd_constant, mcd_from_log_mel, mel_cepstra, MCD_COEFFS};
pub use sweep::{codebook_sweep, synthetic_conversion_mcd, SweepConfig, SweepReport, SweepRow, DEFAULT_SWEEP_SIZES};
