use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{mcd_from_log_mel, score_checkpoint, DisentanglementScore};
use crate::audio::FrontendConfig;
use crate::conversion::convert;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::losses::{LossReport, LossWeights};
use crate::model::ModelConfig;
use crate::synthetic::SyntheticCorpus;
use crate::training::{Checkpoint, TrainConfig, TrainOutputs};

pub const DEFAULT_SWEEP_SIZES: [usize; 4] = [128, 256, 512, 1024];

/// Reports averaged over this many final steps.
const FINAL_WINDOW: usize = 10;
/// Cross-speaker pairs scored with MCD per row.
const MCD_PAIRS: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub sizes: Vec<usize>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub weights: LossWeights,
    pub held_out_fraction: f64,
    pub split_seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sizes: DEFAULT_SWEEP_SIZES.to_vec(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            weights: LossWeights::default(),
            held_out_fraction: 0.2,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub codebook_size: usize,
    pub final_losses: Option<LossReport>,
    pub score: Option<DisentanglementScore>,
    pub mcd: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub fingerprint: String,
    pub rows: Vec<SweepRow>,
}

fn fingerprint(config: &SweepConfig, corpus: &SyntheticCorpus) -> String {
    let text = serde_json::to_string(&(config, &corpus.spec)).unwrap_or_default();
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

fn mean_report(reports: &[LossReport]) -> Option<LossReport> {
    let tail = &reports[reports.len().saturating_sub(FINAL_WINDOW)..];
    let last = tail.last()?;
    let n = tail.len() as f64;
    let avg = |f: fn(&LossReport) -> f64| tail.iter().map(f).sum::<f64>() / n;
    Some(LossReport {
        recon: avg(|r| r.recon),
        latent: avg(|r| r.latent),
        speaker: avg(|r| r.speaker),
        diff: avg(|r| r.diff),
        total: avg(|r| r.total),
        schedule_triggered: last.schedule_triggered,
    })
}

/// Mean MCD between conversions of held-out utterances into other speakers'
/// voices and the ground-truth re-rendering of the same content.
pub fn synthetic_conversion_mcd(ckpt: &Checkpoint, corpus: &SyntheticCorpus, held_out: &Corpus) -> Result<f64> {
    let mut scores = Vec::new();
    'outer: for src in &held_out.utterances {
        for tgt in &held_out.utterances {
            if src.speaker_id == tgt.speaker_id {
                continue;
            }
            let src_idx = corpus
                .find(&src.speaker_id, &src.utterance_id)
                .ok_or_else(|| Error::Data(format!("{} is not in the synthetic corpus", src.utterance_id)))?;
            let tgt_speaker = corpus
                .speaker_of(&tgt.speaker_id)
                .ok_or_else(|| Error::Data(format!("unknown speaker {}", tgt.speaker_id)))?;
            let out = convert(
                &ckpt.model,
                &ckpt.stats.normalize(&src.frames),
                &ckpt.stats.normalize(&tgt.frames),
            )?;
            let converted: Array2<f64> = ckpt.stats.denormalize(&out);
            let reference = corpus.render_as(src_idx, tgt_speaker);
            scores.push(mcd_from_log_mel(&reference, &converted)?);
            if scores.len() == MCD_PAIRS {
                break 'outer;
            }
        }
    }
    if scores.is_empty() {
        return Err(Error::Data("no cross-speaker held-out pairs".into()));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

fn run_row(config: &SweepConfig, size: usize, corpus: &SyntheticCorpus, train_set: &Corpus, held_out: &Corpus) -> SweepRow {
    let mut row = SweepRow {
        codebook_size: size,
        final_losses: None,
        score: None,
        mcd: None,
        error: None,
    };
    let result = (|| -> Result<()> {
        let model = ModelConfig {
            codebook_size: size,
            ..config.model.clone()
        };
        let mut trainer = crate::training::Trainer::new(
            model,
            config.train.clone(),
            config.weights,
            FrontendConfig::default(),
            train_set,
        )?;
        let reports = trainer.run_until(config.train.steps, &TrainOutputs::default())?;
        row.final_losses = mean_report(&reports);
        let ckpt = trainer.into_checkpoint();
        row.score = Some(score_checkpoint(&ckpt, held_out)?);
        row.mcd = Some(synthetic_conversion_mcd(&ckpt, corpus, held_out)?);
        Ok(())
    })();
    if let Err(e) = result {
        log::warn!("sweep row K={size} failed: {e}");
        row.error = Some(e.to_string());
    }
    row
}

/// Trains one model per codebook size with identical seeds and data. Rows are
/// independent and run in parallel; a failing row is recorded, not fatal.
pub fn codebook_sweep(config: &SweepConfig, corpus: &SyntheticCorpus) -> Result<SweepReport> {
    if config.sizes.is_empty() {
        return Err(Error::Config("sweep needs at least one codebook size".into()));
    }
    let mut sizes = config.sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let (train_set, held_out) = corpus
        .to_corpus()
        .split_utterances(config.held_out_fraction, config.split_seed);
    let rows = sizes
        .par_iter()
        .map(|&k| run_row(config, k, corpus, &train_set, &held_out))
        .collect();
    Ok(SweepReport {
        fingerprint: fingerprint(config, corpus),
        rows,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "NA".into())
}

impl SweepReport {
    /// Tab-separated table, one row per codebook size.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# fingerprint {}\n", self.fingerprint);
        out.push_str("codebook_size\trecon\tlatent\tspeaker\tdiff\ttotal\tseparation\tswap_ratio\tmcd_db\terror\n");
        for r in &self.rows {
            let l = r.final_losses;
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                r.codebook_size,
                opt(l.map(|l| l.recon)),
                opt(l.map(|l| l.latent)),
                opt(l.map(|l| l.speaker)),
                opt(l.map(|l| l.diff)),
                opt(l.map(|l| l.total)),
                opt(r.score.map(|s| s.separation)),
                opt(r.score.map(|s| s.swap_ratio)),
                opt(r.mcd),
                r.error.as_deref().unwrap_or("")
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep report serializes")
    }
}
