use ndarray::Array2;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::losses::{LossParts, LossWeights};
use crate::model::Model;

/// Loss components for one example plus the gradient of the weighted total
/// with respect to every model tensor (in [`Model::tensors`] order).
#[derive(Debug, Clone)]
pub struct Objective {
    pub parts: LossParts,
    pub grads: Vec<Array2<f64>>,
}

fn collect_grads(model: &Model, tape: &Tape, total: Var) -> Vec<Array2<f64>> {
    let grads = tape.backward(total);
    model
        .tensors()
        .iter()
        .enumerate()
        .map(|(i, t)| grads.param(i, t.dim()))
        .collect()
}

/// Swap objective for one triplet: `x1` is rebuilt from (C1, S2), `x2` from
/// (C2, S1) and `x3` from its own (C3, S3).
pub fn triplet_objective(
    model: &Model,
    x1: &Array2<f64>,
    x2: &Array2<f64>,
    x3: &Array2<f64>,
    weights: &LossWeights,
) -> Result<Objective> {
    let mut tape = Tape::new();
    let vars = model.register(&mut tape);
    let mut inputs = Vec::with_capacity(3);
    let mut parts = Vec::with_capacity(3);
    for x in [x1, x2, x3] {
        let input = tape.constant(x.clone());
        let latent = model.encode_var(&mut tape, &vars, input);
        parts.push(model.decompose_var(&mut tape, &vars, latent)?);
        inputs.push(input);
    }
    let (p1, p2, p3) = (&parts[0], &parts[1], &parts[2]);
    let y1 = model.decode_var(&mut tape, &vars, p1.content, p2.speaker);
    let y2 = model.decode_var(&mut tape, &vars, p2.content, p1.speaker);
    let y3 = model.decode_var(&mut tape, &vars, p3.content, p3.speaker);

    let recon = [
        tape.mean_abs_diff(y1, inputs[0]),
        tape.mean_abs_diff(y2, inputs[1]),
        tape.mean_abs_diff(y3, inputs[2]),
    ];
    let latent: Vec<Var> = parts
        .iter()
        .map(|p| tape.mean_squared_row_dist(p.latent, p.codes))
        .collect();
    let speaker = tape.mean_abs_diff(p2.speaker, p1.speaker);
    let diff_a = tape.mean_abs_diff(p2.speaker, p3.speaker);
    let diff_b = tape.mean_abs_diff(p1.speaker, p3.speaker);

    let mut loss = LossParts {
        recon: recon.iter().map(|&v| tape.scalar(v)).sum(),
        latent: latent.iter().map(|&v| tape.scalar(v)).sum(),
        speaker: tape.scalar(speaker),
        diff: -(tape.scalar(diff_a) + tape.scalar(diff_b)),
    };

    let mut terms: Vec<(Var, f64)> = recon.iter().map(|&v| (v, weights.recon_weight)).collect();
    terms.extend(latent.iter().map(|&v| (v, weights.alpha)));
    terms.push((speaker, weights.beta));
    match weights.diff_floor {
        // Past the floor the diff term is constant and contributes no gradient.
        Some(floor) if loss.diff < floor => loss.diff = floor,
        _ => {
            terms.push((diff_a, -weights.lambda));
            terms.push((diff_b, -weights.lambda));
        }
    }
    let total = tape.weighted_sum(&terms);
    Ok(Objective {
        parts: loss,
        grads: collect_grads(model, &tape, total),
    })
}

/// Self-reconstruction objective for one utterance (baseline mode): recon and
/// latent only; speaker and diff are reported as 0.
pub fn self_objective(model: &Model, x: &Array2<f64>, weights: &LossWeights) -> Result<Objective> {
    let mut tape = Tape::new();
    let vars = model.register(&mut tape);
    let input = tape.constant(x.clone());
    let latent = model.encode_var(&mut tape, &vars, input);
    let p = model.decompose_var(&mut tape, &vars, latent)?;
    let y = model.decode_var(&mut tape, &vars, p.content, p.speaker);
    let recon = tape.mean_abs_diff(y, input);
    let latent_loss = tape.mean_squared_row_dist(p.latent, p.codes);
    let total = tape.weighted_sum(&[(recon, weights.recon_weight), (latent_loss, weights.alpha)]);
    Ok(Objective {
        parts: LossParts {
            recon: tape.scalar(recon),
            latent: tape.scalar(latent_loss),
            speaker: 0.0,
            diff: 0.0,
        },
        grads: collect_grads(model, &tape, total),
    })
}
