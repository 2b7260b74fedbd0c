use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;

use ndarray::Array2;
use rayon::prelude::*;

use super::{
    clip_global_norm, save_checkpoint, self_objective, triplet_objective, Adam, Batch, BatchSchedule, Checkpoint,
    Mode, Objective, TrainConfig, TripletSampler,
};
use crate::audio::FrontendConfig;
use crate::corpus::{Corpus, FeatureStats};
use crate::error::{Error, Result};
use crate::losses::{total_loss, update_weights, LossParts, LossReport, LossWeights, METRICS_HEADER};
use crate::model::{Model, ModelConfig};

/// Where a training run writes its side outputs.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    /// Appended with one `step,recon,latent,speaker,diff,total,triggered` record per step.
    pub metrics_log: Option<PathBuf>,
    /// Rewritten every `checkpoint_every` steps and at the end of the run.
    pub checkpoint: Option<PathBuf>,
}

pub struct Trainer {
    ckpt: Checkpoint,
    /// Training features after normalization with `ckpt.stats`.
    corpus: Corpus,
}

impl Trainer {
    /// Fresh run: fits normalization statistics on `corpus` and initializes
    /// the model and optimizer.
    pub fn new(
        mut model_config: ModelConfig,
        train: TrainConfig,
        weights: LossWeights,
        frontend: FrontendConfig,
        corpus: &Corpus,
    ) -> Result<Self> {
        train.validate()?;
        weights.validate()?;
        corpus.validate()?;
        let dim = corpus.feature_dim().unwrap_or(0);
        if model_config.n_mels != dim {
            log::debug!("model n_mels {} follows the corpus width {dim}", model_config.n_mels);
            model_config.n_mels = dim;
        }
        let model = Model::new(model_config)?;
        let shapes: Vec<(usize, usize)> = model.tensors().iter().map(|t| t.dim()).collect();
        let optimizer = Adam::new(&shapes, train.learning_rate, train.adam_beta1, train.adam_beta2, train.adam_eps);
        let stats = FeatureStats::fit(corpus)?;
        let ckpt = Checkpoint {
            model,
            optimizer,
            weights,
            frontend,
            stats,
            train,
            step: 0,
        };
        Self::resume(ckpt, corpus)
    }

    /// Continues from a checkpoint using its stored statistics.
    pub fn resume(ckpt: Checkpoint, corpus: &Corpus) -> Result<Self> {
        corpus.validate()?;
        if corpus.feature_dim() != Some(ckpt.model.config.n_mels) {
            return Err(Error::Compatibility(format!(
                "corpus has {:?} feature columns, checkpoint model expects {}",
                corpus.feature_dim(),
                ckpt.model.config.n_mels
            )));
        }
        let stats = ckpt.stats.clone();
        let corpus = corpus.map_frames(|f| stats.normalize(f));
        // Fail early on unusable corpora rather than at the first step.
        TripletSampler::new(&corpus, ckpt.train.segment_len)?;
        Ok(Self { ckpt, corpus })
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.ckpt
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        self.ckpt
    }

    /// Runs until the checkpoint reaches `until_step`, returning one report per step.
    pub fn run_until(&mut self, until_step: u64, outputs: &TrainOutputs) -> Result<Vec<LossReport>> {
        let start = self.ckpt.step;
        if until_step <= start {
            return Ok(Vec::new());
        }
        let train = self.ckpt.train.clone();
        let sampler = TripletSampler::new(&self.corpus, train.segment_len)?;
        let schedule = BatchSchedule::new(sampler, train.seed, train.batch_size, train.mode);

        let mut log = match &outputs.metrics_log {
            Some(path) => {
                let fresh = !path.exists();
                let mut f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| Error::io(path, e))?;
                if fresh {
                    writeln!(f, "{METRICS_HEADER}").map_err(|e| Error::io(path, e))?;
                }
                Some((path.clone(), f))
            }
            None => None,
        };

        let mut reports = Vec::with_capacity((until_step - start) as usize);
        let ckpt = &mut self.ckpt;
        schedule.for_each_prefetched(start..until_step, train.workers, |step, batch| {
            let report = train_step(&batch, ckpt)?;
            if let Some((path, f)) = log.as_mut() {
                writeln!(f, "{}", report.log_line(step)).map_err(|e| Error::io(&*path, e))?;
            }
            if train.log_every > 0 && (step + 1) % train.log_every == 0 {
                log::info!(
                    "step {} total {:.4} recon {:.4} latent {:.4} speaker {:.4} diff {:.4}",
                    step + 1,
                    report.total,
                    report.recon,
                    report.latent,
                    report.speaker,
                    report.diff
                );
            }
            if let Some(path) = &outputs.checkpoint {
                if train.checkpoint_every > 0 && ckpt.step % train.checkpoint_every == 0 {
                    save_checkpoint(ckpt, path)?;
                }
            }
            reports.push(report);
            Ok(())
        })?;
        if let Some(path) = &outputs.checkpoint {
            save_checkpoint(&self.ckpt, path)?;
        }
        Ok(reports)
    }
}

fn average(objectives: Vec<Objective>) -> (LossParts, Vec<Array2<f64>>) {
    let n = objectives.len() as f64;
    let mut iter = objectives.into_iter();
    let first = iter.next().expect("non-empty batch");
    let mut parts = first.parts;
    let mut grads = first.grads;
    for o in iter {
        parts.recon += o.parts.recon;
        parts.latent += o.parts.latent;
        parts.speaker += o.parts.speaker;
        parts.diff += o.parts.diff;
        for (acc, g) in grads.iter_mut().zip(&o.grads) {
            *acc += g;
        }
    }
    parts.recon /= n;
    parts.latent /= n;
    parts.speaker /= n;
    parts.diff /= n;
    for g in grads.iter_mut() {
        g.mapv_inplace(|v| v / n);
    }
    (parts, grads)
}

/// One optimizer step on `batch`.
///
/// The report carries the losses weighted by the weights in effect for this
/// step; the schedule is then evaluated on it and any switch applies from the
/// next step on.
pub fn train_step(batch: &Batch, ckpt: &mut Checkpoint) -> Result<LossReport> {
    let weights = ckpt.weights;
    let model = &ckpt.model;
    let objectives: Vec<Objective> = match (batch, ckpt.train.mode) {
        (Batch::Triplets(ts), Mode::Avqvc) if !ts.is_empty() => ts
            .par_iter()
            .map(|t| triplet_objective(model, &t.x1, &t.x2, &t.x3, &weights))
            .collect::<Result<_>>()?,
        (Batch::Singles(xs), Mode::Vqvc) if !xs.is_empty() => xs
            .par_iter()
            .map(|x| self_objective(model, x, &weights))
            .collect::<Result<_>>()?,
        (_, mode) => {
            return Err(Error::Config(format!("batch does not match training mode {mode:?} or is empty")));
        }
    };
    let (parts, mut grads) = average(objectives);
    let mut report = total_loss(parts, &weights).map_err(|e| Error::Numeric(format!("step {}: {e}", ckpt.step)))?;
    if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::Numeric(format!("step {}: non-finite gradient, report {report:?}", ckpt.step)));
    }
    clip_global_norm(&mut grads, ckpt.train.grad_clip);
    ckpt.optimizer.update(ckpt.model.tensors_mut(), &grads);
    ckpt.weights = update_weights(&report, &weights);
    report.schedule_triggered = ckpt.weights.triggered;
    ckpt.step += 1;
    Ok(report)
}

/// Trains from scratch for `train.steps` steps.
pub fn train(
    model_config: ModelConfig,
    train: TrainConfig,
    weights: LossWeights,
    frontend: FrontendConfig,
    corpus: &Corpus,
    outputs: &TrainOutputs,
) -> Result<Checkpoint> {
    let steps = train.steps;
    let mut trainer = Trainer::new(model_config, train, weights, frontend, corpus)?;
    trainer.run_until(steps, outputs)?;
    Ok(trainer.into_checkpoint())
}
