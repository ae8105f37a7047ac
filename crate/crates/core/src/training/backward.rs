//! Per-sample loss and its exact parameter gradient.

use crate::error::{Error, Result};
use crate::model::{backward_tape, forward_tape, softmax, ModelInput, ModelWeights};
use crate::optw::{ensemble_backward_per_head, ensemble_forward_per_head, ensemble_loss, ensemble_loss_grad};
use crate::spectral::{BandFeatures, N_BANDS};

use super::{cross_entropy, CE_EPS};

#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub input: ModelInput<'a>,
    pub label: usize,
}

/// `∂CE(softmax(z), y)/∂z`.
pub fn softmax_ce_grad(probs: &[f64], y: usize) -> Vec<f64> {
    let kappa = probs[y] / (probs[y] + CE_EPS);
    probs
        .iter()
        .enumerate()
        .map(|(c, &p)| kappa * (p - if c == y { 1.0 } else { 0.0 }))
        .collect()
}

/// Vector-Jacobian product of softmax: `p ⊙ (g − ⟨g, p⟩)`.
fn softmax_vjp(p: &[f64], g: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    p.iter().zip(g).map(|(pi, gi)| pi * (gi - dot)).collect()
}

fn band_inputs<'a: 'b, 'b>(input: ModelInput<'a>, isolated: &'b [BandFeatures]) -> Vec<ModelInput<'b>> {
    isolated.iter().map(|f| ModelInput { segment: input.segment, features: Some(f) }).collect()
}

/// Loss of one sample, without gradients.
pub fn sample_loss(weights: &ModelWeights, sample: &Sample<'_>) -> Result<f64> {
    let tape = forward_tape(weights, sample.input)?;
    let mut loss = cross_entropy(&softmax(&tape.logits), sample.label)?;
    if let Some(ens) = &weights.ensemble {
        let features = sample.input.features.ok_or_else(|| Error::invalid("ensemble layer needs band features"))?;
        let isolated: Vec<BandFeatures> = (0..N_BANDS).map(|r| features.isolate(r)).collect();
        let mut xis = Vec::with_capacity(N_BANDS);
        for inp in band_inputs(sample.input, &isolated) {
            xis.push(softmax(&forward_tape(weights, inp)?.logits));
        }
        loss += ensemble_loss(&ensemble_forward_per_head(&xis, ens)?, sample.label)?;
    }
    Ok(loss)
}

/// Adds `∂loss/∂θ` of one sample into `grad` and returns the loss.
///
/// With the ensemble layer the loss is `CE(ξ, y) + Σ_r CE(ψ^r, y)` where
/// `ξ_r` is the model output on the features of band `r` alone.
pub fn accumulate_sample_grad(weights: &ModelWeights, sample: &Sample<'_>, grad: &mut ModelWeights) -> Result<f64> {
    let tape = forward_tape(weights, sample.input)?;
    let probs = softmax(&tape.logits);
    let mut loss = cross_entropy(&probs, sample.label)?;
    backward_tape(weights, &tape, &softmax_ce_grad(&probs, sample.label), grad)?;

    if let Some(ens) = &weights.ensemble {
        let features = sample.input.features.ok_or_else(|| Error::invalid("ensemble layer needs band features"))?;
        let isolated: Vec<BandFeatures> = (0..N_BANDS).map(|r| features.isolate(r)).collect();
        let mut tapes = Vec::with_capacity(N_BANDS);
        let mut xis = Vec::with_capacity(N_BANDS);
        for inp in band_inputs(sample.input, &isolated) {
            let t = forward_tape(weights, inp)?;
            xis.push(softmax(&t.logits));
            tapes.push(t);
        }
        let out = ensemble_forward_per_head(&xis, ens)?;
        loss += ensemble_loss(&out, sample.label)?;
        let gm = ensemble_loss_grad(&out, sample.label);
        let eg = ensemble_backward_per_head(&xis, ens, &gm)?;
        let gw = grad.ensemble.as_mut().expect("gradient layout mirrors weights");
        for (dst, src) in gw.w.iter_mut().zip(&eg.w) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
        for r in 0..N_BANDS {
            let g_logits = softmax_vjp(&xis[r], &eg.xi[r]);
            backward_tape(weights, &tapes[r], &g_logits, grad)?;
        }
    }
    Ok(loss)
}

/// Mean loss and mean gradient over `samples`, accumulated in order.
pub fn batch_grad(weights: &ModelWeights, samples: &[Sample<'_>]) -> Result<(f64, ModelWeights)> {
    let mut grad = weights.zeros_like();
    let mut total = 0.0;
    for s in samples {
        total += accumulate_sample_grad(weights, s, &mut grad)?;
    }
    let scale = 1.0 / samples.len().max(1) as f64;
    for t in grad.tensors_mut() {
        t.data.iter_mut().for_each(|v| *v *= scale);
    }
    if let Some(name) = grad.first_non_finite() {
        return Err(Error::Divergence(format!("non-finite gradient in {name}")));
    }
    Ok((total * scale, grad))
}
