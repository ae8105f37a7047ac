//! Loss, analytic gradients, Adam and the training loop.

mod adam;
mod backward;
mod gradcheck;

pub use adam::{adam_step, AdamState};
pub use backward::{accumulate_sample_grad, batch_grad, sample_loss, softmax_ce_grad, Sample};
pub use gradcheck::{
    grad_check, grad_check_weights, miniature_config, perturbed_weights, relative_error, GradCheckOptions,
    GradCheckReport, MiniBatch, TensorCheck, GRAD_CHECK_FLOOR, GRAD_CHECK_TOL, MINI_SEQ_LEN,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{forward, softmax, ModelConfig, ModelWeights};
use crate::pipeline::PreparedSplit;

/// Floor inside the logarithm of the cross-entropy.
pub const CE_EPS: f64 = 1e-12;

/// `−ln(p[y] + ε)`.
pub fn cross_entropy(probs: &[f64], y: usize) -> Result<f64> {
    if y >= probs.len() {
        return Err(Error::invalid(format!("label {y} out of range for {} classes", probs.len())));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("probabilities sum to {sum}")));
    }
    Ok(cross_entropy_unchecked(probs, y))
}

pub(crate) fn cross_entropy_unchecked(probs: &[f64], y: usize) -> f64 {
    -(probs[y] + CE_EPS).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub optw_enabled: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 500,
            batch_size: 32,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            optw_enabled: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::invalid("epochs and batch size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r).map_err(|e| Error::data(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::data(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::data(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights at the epoch with the best validation accuracy.
    pub best: ModelWeights,
    pub best_epoch: usize,
    pub last: ModelWeights,
    pub history: TrainHistory,
}

/// Mean cross-entropy and accuracy of `weights` on `split` (ensemble
/// layer ignored).
pub fn loss_and_accuracy(weights: &ModelWeights, split: &PreparedSplit) -> Result<(f64, f64)> {
    let samples = split.samples(weights.config.variant);
    if samples.is_empty() {
        return Err(Error::data("empty split"));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for s in &samples {
        let logits = forward(weights, s.input)?;
        loss += cross_entropy(&softmax(&logits.0), s.label)?;
        correct += usize::from(logits.argmax() == s.label);
    }
    let n = samples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

pub fn train(model: &ModelConfig, train_split: &PreparedSplit, val_split: &PreparedSplit, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(model, train_split, val_split, cfg, &mut |_| {})
}

/// Mini-batch Adam on the mean batch loss with a seeded shuffle per epoch;
/// keeps the first epoch reaching the highest validation accuracy.
pub fn train_with_progress(
    model: &ModelConfig,
    train_split: &PreparedSplit,
    val_split: &PreparedSplit,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = model.clone();
    model.optw = cfg.optw_enabled;
    let mut weights = ModelWeights::init(&model)?;
    let samples = train_split.samples(model.variant);
    if samples.is_empty() || val_split.is_empty() {
        return Err(Error::data("training needs non-empty train and validation splits"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(weights.param_count());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = TrainHistory::default();
    let mut best = (weights.clone(), 0usize, f64::NEG_INFINITY);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| samples[i]));
            let (loss, grad) = batch_grad(&weights, &batch).map_err(|e| at_epoch(e, epoch))?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("non-finite loss at epoch {epoch}")));
            }
            epoch_loss += loss * chunk.len() as f64;
            let mut flat = weights.flatten();
            adam_step(&mut flat, &grad.flatten(), &mut adam, cfg)?;
            weights.assign_flat(&flat);
            if let Some(name) = weights.first_non_finite() {
                return Err(Error::Divergence(format!("non-finite parameter {name} at epoch {epoch}")));
            }
        }
        let (val_loss, val_acc) = loss_and_accuracy(&weights, val_split).map_err(|e| at_epoch(e, epoch))?;
        let record = EpochRecord { epoch, train_loss: epoch_loss / samples.len() as f64, val_loss, val_acc };
        on_epoch(&record);
        history.records.push(record);
        if val_acc > best.2 {
            best = (weights.clone(), epoch, val_acc);
        }
    }
    Ok(TrainOutcome { best: best.0, best_epoch: best.1, last: weights, history })
}

fn at_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::Divergence(msg) => Error::Divergence(format!("epoch {epoch}: {msg}")),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn cross_entropy_closed_forms() {
        let u = [1.0 / 3.0; 3];
        for y in 0..3 {
            assert!((cross_entropy(&u, y).unwrap() - 3f64.ln()).abs() < 1e-10);
        }
        assert!(cross_entropy(&[0.0, 1.0, 0.0], 1).unwrap() <= 1e-12);
        assert!((cross_entropy(&[0.5, 0.25, 0.25], 0).unwrap() - 2f64.ln()).abs() < 1e-11);
        assert!(cross_entropy(&u, 3).is_err());
    }

    #[test]
    fn classifier_bias_gradient_on_zero_input() {
        let cfg = miniature_config(Variant::Temporal, false, 3);
        let mut w = ModelWeights::init(&cfg).unwrap();
        w.classifier.bias = vec![0.4, -0.2, 0.7];
        let seg = ndarray::Array2::zeros((3, 16));
        let s = Sample { input: crate::model::ModelInput { segment: Some(seg.view()), features: None }, label: 2 };
        let mut g = w.zeros_like();
        accumulate_sample_grad(&w, &s, &mut g).unwrap();
        let p = softmax(&w.classifier.bias);
        for k in 0..3 {
            let expected = p[k] - if k == 2 { 1.0 } else { 0.0 };
            assert!((g.classifier.bias[k] - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicated_sample_doubles_summed_gradient() {
        let cfg = miniature_config(Variant::Combined, false, 5);
        let w = perturbed_weights(&cfg, 0.3).unwrap();
        let mb = MiniBatch::random(&cfg, 1, 9);
        let one = mb.samples(Variant::Combined);
        let mut g1 = w.zeros_like();
        accumulate_sample_grad(&w, &one[0], &mut g1).unwrap();
        let mut g2 = w.zeros_like();
        accumulate_sample_grad(&w, &one[0], &mut g2).unwrap();
        accumulate_sample_grad(&w, &one[0], &mut g2).unwrap();
        for (a, b) in g1.flatten().iter().zip(g2.flatten()) {
            assert_eq!(2.0 * a, b);
        }
    }

    #[test]
    fn corrupted_gradient_fails_check() {
        let cfg = miniature_config(Variant::Spectral, false, 1);
        let w = perturbed_weights(&cfg, 0.3).unwrap();
        let mb = MiniBatch::random(&cfg, 2, 2);
        let corrupt = |g: &mut ModelWeights| g.classifier.bias[0] += 0.1;
        let r = grad_check_weights(&w, &mb.samples(Variant::Spectral), GradCheckOptions::default(), Some(&corrupt)).unwrap();
        assert!(!r.passed(GRAD_CHECK_TOL));
        assert_eq!(r.worst_tensor, "classifier.bias");
    }
}
