use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::training::Checkpoint;

/// Anything that splits features into (content, speaker) and renders them back.
pub trait FactorModel {
    fn factors(&self, frames: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)>;
    fn render(&self, content: &Array2<f64>, speaker: &Array1<f64>) -> Result<Array2<f64>>;
}

impl FactorModel for Model {
    fn factors(&self, frames: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        let b = self.analyze(frames)?;
        Ok((b.content, b.speaker))
    }

    fn render(&self, content: &Array2<f64>, speaker: &Array1<f64>) -> Result<Array2<f64>> {
        self.decode(content, speaker)
    }
}

/// Cosine similarity; defined as long as at least one vector is nonzero.
pub fn speaker_similarity(a: &Array1<f64>, b: &Array1<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("embeddings of length {} and {}", a.len(), b.len())));
    }
    let na = a.dot(a).sqrt();
    let nb = b.dot(b).sqrt();
    if na == 0.0 && nb == 0.0 {
        return Err(Error::UndefinedSimilarity);
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisentanglementScore {
    pub intra_cosine: f64,
    pub inter_cosine: f64,
    /// `intra_cosine - inter_cosine`, in [-2, 2].
    pub separation: f64,
    pub self_l1: f64,
    pub swap_l1: f64,
    /// `swap_l1 / self_l1`
    pub swap_ratio: f64,
    pub intra_pairs: usize,
    pub inter_pairs: usize,
}

fn mean_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len().max(1) as f64
}

/// Scores speaker embeddings and swap reconstructions on held-out features.
///
/// Separation is the mean cosine over same-speaker pairs minus the mean over
/// different-speaker pairs. The swap ratio compares rebuilding each utterance
/// with another same-speaker utterance's speaker vector against rebuilding it
/// with its own.
pub fn disentanglement_score(model: &impl FactorModel, held_out: &Corpus) -> Result<DisentanglementScore> {
    let by_speaker = held_out.by_speaker();
    if by_speaker.len() < 2 {
        return Err(Error::Data(format!(
            "disentanglement needs at least 2 speakers, found {}",
            by_speaker.len()
        )));
    }
    let factors: Vec<(Array2<f64>, Array1<f64>)> = held_out
        .utterances
        .iter()
        .map(|u| model.factors(&u.frames))
        .collect::<Result<_>>()?;

    let (mut intra, mut inter) = (Vec::new(), Vec::new());
    for i in 0..factors.len() {
        for j in i + 1..factors.len() {
            let c = speaker_similarity(&factors[i].1, &factors[j].1)?;
            if held_out.utterances[i].speaker_id == held_out.utterances[j].speaker_id {
                intra.push(c);
            } else {
                inter.push(c);
            }
        }
    }
    if intra.is_empty() {
        return Err(Error::Data("no speaker has two held-out utterances".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;

    let (mut self_err, mut swap_err, mut n) = (0.0, 0.0, 0usize);
    for idx in by_speaker.values().filter(|idx| idx.len() >= 2) {
        for (k, &i) in idx.iter().enumerate() {
            let partner = idx[(k + 1) % idx.len()];
            let x = &held_out.utterances[i].frames;
            let (content, own) = &factors[i];
            self_err += mean_abs(&model.render(content, own)?, x);
            swap_err += mean_abs(&model.render(content, &factors[partner].1)?, x);
            n += 1;
        }
    }
    let self_l1 = self_err / n as f64;
    let swap_l1 = swap_err / n as f64;
    let (intra_cosine, inter_cosine) = (mean(&intra), mean(&inter));
    Ok(DisentanglementScore {
        intra_cosine,
        inter_cosine,
        separation: intra_cosine - inter_cosine,
        self_l1,
        swap_l1,
        swap_ratio: if self_l1 > 0.0 { swap_l1 / self_l1 } else if swap_l1 == 0.0 { 1.0 } else { f64::INFINITY },
        intra_pairs: intra.len(),
        inter_pairs: inter.len(),
    })
}

/// Scores a checkpoint on raw (unnormalized) held-out features.
pub fn score_checkpoint(ckpt: &Checkpoint, held_out: &Corpus) -> Result<DisentanglementScore> {
    let normalized = held_out.map_frames(|f| ckpt.stats.normalize(f));
    disentanglement_score(&ckpt.model, &normalized)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cosine_cases() {
        let a = array![1.0, 2.0, -0.5];
        assert!((speaker_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(speaker_similarity(&array![1.0, 0.0], &array![0.0, 3.0]).unwrap(), 0.0);
        assert_eq!(speaker_similarity(&array![1.0, 0.0], &array![-1.0, 0.0]).unwrap(), -1.0);
        assert!(matches!(
            speaker_similarity(&array![0.0, 0.0], &array![0.0, 0.0]),
            Err(Error::UndefinedSimilarity)
        ));
    }
}
