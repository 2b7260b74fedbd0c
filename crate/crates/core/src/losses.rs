//! Training objectives and the loss-weight schedule.
//!
//! All norms are mean-normalized (divided by the element count) so the
//! weights do not depend on frame count or feature width.
//!
//! ```text
//! recon   = |x1' - x1| + |x2' - x2| + |x3' - x3|      x1' = dec(C1 + S2), x2' = dec(C2 + S1)
//! latent  = sum_i mean_t ||enc(x_i) - C_i||^2
//! speaker = |S2 - S1|
//! diff    = -(|S2 - S3| + |S1 - S3|)
//! total   = w_r * recon + alpha * latent + beta * speaker + lambda * diff
//! ```

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ratio of `|diff|` to `recon` above which the schedule switches weights.
pub const SCHEDULE_RATIO: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub recon_weight: f64,
    /// Set once the schedule has fired; never cleared.
    pub triggered: bool,
    /// Optional lower bound on the diff term. `None` leaves it unbounded.
    pub diff_floor: Option<f64>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.02,
            beta: 0.03,
            lambda: 0.02,
            recon_weight: 1.0,
            triggered: false,
            diff_floor: None,
        }
    }
}

impl LossWeights {
    /// Weights after the schedule fires: alpha kept, beta 0.05, lambda 0.01, recon 2.
    pub fn triggered_from(self) -> Self {
        Self {
            beta: 0.05,
            lambda: 0.01,
            recon_weight: 2.0,
            triggered: true,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lambda", self.lambda),
            ("recon_weight", self.recon_weight),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("loss weight {name} must be finite")));
            }
        }
        Ok(())
    }
}

/// Unweighted loss components.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub recon: f64,
    pub latent: f64,
    pub speaker: f64,
    pub diff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub recon: f64,
    pub latent: f64,
    pub speaker: f64,
    pub diff: f64,
    pub total: f64,
    pub schedule_triggered: bool,
}

impl LossReport {
    pub fn parts(&self) -> LossParts {
        LossParts {
            recon: self.recon,
            latent: self.latent,
            speaker: self.speaker,
            diff: self.diff,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.recon, self.latent, self.speaker, self.diff, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    /// One metrics-log record: `step,recon,latent,speaker,diff,total,triggered`.
    pub fn log_line(&self, step: u64) -> String {
        format!(
            "{step},{:?},{:?},{:?},{:?},{:?},{}",
            self.recon,
            self.latent,
            self.speaker,
            self.diff,
            self.total,
            u8::from(self.schedule_triggered)
        )
    }
}

pub const METRICS_HEADER: &str = "step,recon,latent,speaker,diff,total,triggered";

fn mean_abs(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    let n = a.len().max(1) as f64;
    Ok(a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n)
}

/// Sum of the mean absolute errors of each (reconstruction, target) pair.
pub fn recon_loss(pairs: &[(&Array2<f64>, &Array2<f64>)]) -> Result<f64> {
    pairs.iter().map(|(p, t)| mean_abs(p, t)).sum()
}

pub fn speaker_loss(s1: &Array1<f64>, s2: &Array1<f64>) -> Result<f64> {
    if s1.len() != s2.len() {
        return Err(Error::Shape(format!("speaker vectors of length {} and {}", s1.len(), s2.len())));
    }
    let n = s1.len().max(1) as f64;
    Ok(s1.iter().zip(s2.iter()).map(|(a, b)| (b - a).abs()).sum::<f64>() / n)
}

pub fn diff_loss(s1: &Array1<f64>, s2: &Array1<f64>, s3: &Array1<f64>) -> Result<f64> {
    Ok(-(speaker_loss(s2, s3)? + speaker_loss(s1, s3)?))
}

pub fn total_loss(parts: LossParts, weights: &LossWeights) -> Result<LossReport> {
    let LossParts {
        recon,
        latent,
        speaker,
        diff,
    } = parts;
    if ![recon, latent, speaker, diff].iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric(format!("loss parts {parts:?}")));
    }
    Ok(LossReport {
        recon,
        latent,
        speaker,
        diff,
        total: weights.recon_weight * recon + weights.alpha * latent + weights.beta * speaker + weights.lambda * diff,
        schedule_triggered: weights.triggered,
    })
}

/// Switches to the stabilizing weights once `|diff| > 5 * recon`. The switch
/// is latched: triggered weights are returned unchanged.
pub fn update_weights(report: &LossReport, weights: &LossWeights) -> LossWeights {
    if weights.triggered {
        return *weights;
    }
    if report.diff.abs() > SCHEDULE_RATIO * report.recon {
        weights.triggered_from()
    } else {
        *weights
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn report(recon: f64, diff: f64) -> LossReport {
        LossReport {
            recon,
            diff,
            ..Default::default()
        }
    }

    #[test]
    fn recon_hand_cases() {
        let x = Array2::from_elem((3, 4), 1.0);
        let y = Array2::from_elem((5, 2), -2.0);
        let z = Array2::from_elem((2, 2), 0.3);
        assert_eq!(recon_loss(&[(&x, &x), (&y, &y), (&z, &z)]).unwrap(), 0.0);
        let shifted = &x + 0.5;
        assert_eq!(recon_loss(&[(&shifted, &x), (&y, &y), (&z, &z)]).unwrap(), 0.5);
        assert_eq!(recon_loss(&[(&y, &y), (&z, &z), (&shifted, &x)]).unwrap(), 0.5);
        assert!(matches!(recon_loss(&[(&x, &y)]), Err(Error::Shape(_))));
    }

    #[test]
    fn speaker_and_diff_hand_cases() {
        let zero = Array1::zeros(4);
        let one = Array1::ones(4);
        assert_eq!(speaker_loss(&zero, &one).unwrap(), 1.0);
        assert_eq!(speaker_loss(&one, &one).unwrap(), 0.0);
        assert_eq!(diff_loss(&zero, &zero, &one).unwrap(), -2.0);
        assert_eq!(diff_loss(&one, &one, &one).unwrap(), 0.0);
        assert!(speaker_loss(&zero, &Array1::zeros(3)).is_err());
    }

    #[test]
    fn total_with_default_weights() {
        let parts = LossParts {
            recon: 2.0,
            latent: 1.0,
            speaker: 1.0,
            diff: -1.0,
        };
        let r = total_loss(parts, &LossWeights::default()).unwrap();
        assert!((r.total - 2.03).abs() < 1e-12);
        let masked = LossWeights {
            alpha: 0.0,
            beta: 0.0,
            lambda: 0.0,
            ..Default::default()
        };
        assert_eq!(total_loss(parts, &masked).unwrap().total, 2.0);
        let bad = LossParts { recon: f64::NAN, ..parts };
        assert!(matches!(total_loss(bad, &masked), Err(Error::Numeric(_))));
    }

    #[test]
    fn schedule_threshold_and_latch() {
        let w = LossWeights::default();
        let fired = update_weights(&report(1.0, -5.1), &w);
        assert_eq!((fired.alpha, fired.beta, fired.lambda, fired.recon_weight), (0.02, 0.05, 0.01, 2.0));
        assert!(fired.triggered);
        assert_eq!(update_weights(&report(1.0, -4.9), &w), w);
        assert_eq!(update_weights(&report(0.0, 0.0), &w), w);
        assert_eq!(update_weights(&report(1.0, -5.0), &w), w);
        // latched: a calm report afterwards keeps the triggered weights
        assert_eq!(update_weights(&report(1.0, 0.0), &fired), fired);
        assert_eq!(update_weights(&report(1.0, -9.0), &fired), fired);
    }

    proptest! {
        #[test]
        fn sign_contracts(v in proptest::collection::vec(-5.0f64..5.0, 12)) {
            let s1 = Array1::from_vec(v[0..4].to_vec());
            let s2 = Array1::from_vec(v[4..8].to_vec());
            let s3 = Array1::from_vec(v[8..12].to_vec());
            prop_assert!(speaker_loss(&s1, &s2).unwrap() >= 0.0);
            let d = diff_loss(&s1, &s2, &s3).unwrap();
            prop_assert!(d <= 0.0);
            prop_assert_eq!(d, -(speaker_loss(&s2, &s3).unwrap() + speaker_loss(&s1, &s3).unwrap()));
            prop_assert_eq!(d, diff_loss(&s2, &s1, &s3).unwrap());
            prop_assert_eq!(speaker_loss(&s1, &s2).unwrap(), speaker_loss(&s2, &s1).unwrap());
        }

        #[test]
        fn total_is_linear_in_weights(
            p in proptest::collection::vec(0.0f64..3.0, 3),
            diff in -3.0f64..0.0,
            w in proptest::collection::vec(0.0f64..2.0, 4),
            c in 0.0f64..4.0,
        ) {
            let parts = LossParts { recon: p[0], latent: p[1], speaker: p[2], diff };
            let base = LossWeights { recon_weight: w[0], alpha: w[1], beta: w[2], lambda: w[3], ..Default::default() };
            let scaled = LossWeights { recon_weight: c * w[0], alpha: c * w[1], beta: c * w[2], lambda: c * w[3], ..base };
            let a = total_loss(parts, &base).unwrap().total;
            let b = total_loss(parts, &scaled).unwrap().total;
            prop_assert!((b - c * a).abs() < 1e-9);
        }

        #[test]
        fn update_is_idempotent(recon in 0.0f64..2.0, diff in -20.0f64..0.0) {
            let w = LossWeights::default();
            let once = update_weights(&report(recon, diff), &w);
            prop_assert_eq!(update_weights(&report(recon, diff), &once), once);
        }
    }
}
