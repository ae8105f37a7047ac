//! EEG-SSM classifier in three variants.
//!
//! ```text
//! temporal:  segment  (N_c × N_seq) ─ conv ─┐
//! spectral:  features (N_c × 5)     ─ conv ─┤ (combined: concatenated in time)
//!                                           ├─ [causal norm → per-channel SSM → σ-gate → +residual] × n_blocks
//!                                           └─ mean over time → linear → logits (HC, FTD, AD)
//! ```
//!
//! Every channel owns an independent single-input single-output SSM head
//! per block; channels mix only in the convolutional embedding.

mod checkpoint;
pub mod layers;
mod tape;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use tape::{backward_tape, forward_tape, Tape};

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::optw::{init_band_weights, EnsembleWeights};
use crate::spectral::BandFeatures;
use crate::ssm::init_ssm;

pub const N_CLASSES: usize = 3;

/// Embedding init range is `±EMBED_INIT_GAIN / sqrt(c_in · k)`.
///
/// Kept small so the residual stream starts close to zero while the
/// normalised SSM branch carries the signal.
pub const EMBED_INIT_GAIN: f64 = 0.01;
pub const CLASSIFIER_INIT_RANGE: f64 = 0.01;
pub const GATE_INIT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Temporal,
    Spectral,
    Combined,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Temporal, Variant::Spectral, Variant::Combined];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Temporal => "temporal",
            Variant::Spectral => "spectral",
            Variant::Combined => "combined",
        }
    }

    pub fn uses_segment(self) -> bool {
        matches!(self, Variant::Temporal | Variant::Combined)
    }

    pub fn uses_features(self) -> bool {
        matches!(self, Variant::Spectral | Variant::Combined)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "temporal" => Ok(Variant::Temporal),
            "spectral" => Ok(Variant::Spectral),
            "combined" => Ok(Variant::Combined),
            other => Err(Error::invalid(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Equal to the number of input channels.
    pub d_model: usize,
    pub n_state: usize,
    pub n_blocks: usize,
    pub n_classes: usize,
    pub conv_kernel_len: usize,
    pub seed: u64,
    /// Attach the band ensemble layer (spectral and combined only).
    #[serde(default)]
    pub optw: bool,
}

impl ModelConfig {
    pub fn new(variant: Variant, d_model: usize) -> Self {
        Self {
            variant,
            d_model,
            n_state: 16,
            n_blocks: 2,
            n_classes: N_CLASSES,
            conv_kernel_len: 5,
            seed: 0,
            optw: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_state == 0 || self.n_blocks == 0 || self.conv_kernel_len == 0 {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        if self.n_classes != N_CLASSES {
            return Err(Error::invalid(format!("n_classes must be {N_CLASSES}")));
        }
        if self.variant.uses_features() && self.conv_kernel_len > crate::spectral::N_BANDS {
            return Err(Error::invalid("conv kernel longer than the 5-band spectral sequence"));
        }
        if self.optw && self.variant == Variant::Temporal {
            return Err(Error::invalid("the band ensemble layer needs spectral features"));
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::new(Variant::Combined, 19)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub c_out: usize,
    pub c_in: usize,
    pub k: usize,
    /// `c_out × c_in × k`, tap `j` multiplies `x[t − j]`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv1d {
    pub fn zeros(c_out: usize, c_in: usize, k: usize) -> Self {
        Self { c_out, c_in, k, weight: vec![0.0; c_out * c_in * k], bias: vec![0.0; c_out] }
    }

    fn init(c_out: usize, c_in: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = EMBED_INIT_GAIN / ((c_in * k) as f64).sqrt();
        let mut conv = Self::zeros(c_out, c_in, k);
        conv.weight.iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
        conv
    }
}

/// One encoder block: `d_model` SSM heads plus norm and gate vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub d_model: usize,
    pub n_state: usize,
    /// `d_model × n_state` each.
    pub a_log: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d_skip: Vec<f64>,
    pub dt_log: Vec<f64>,
    pub gate: Vec<f64>,
    pub norm_scale: Vec<f64>,
    pub norm_shift: Vec<f64>,
}

impl BlockWeights {
    pub fn zeros(d_model: usize, n_state: usize) -> Self {
        let dn = d_model * n_state;
        Self {
            d_model,
            n_state,
            a_log: vec![0.0; dn],
            b: vec![0.0; dn],
            c: vec![0.0; dn],
            d_skip: vec![0.0; d_model],
            dt_log: vec![0.0; d_model],
            gate: vec![0.0; d_model],
            norm_scale: vec![0.0; d_model],
            norm_shift: vec![0.0; d_model],
        }
    }

    /// Heads from [`init_ssm`] with per-channel seeds drawn from `seed`.
    pub fn init(d_model: usize, n_state: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut block = Self::zeros(d_model, n_state);
        for ch in 0..d_model {
            let head = init_ssm(n_state, rng.random())?;
            let range = ch * n_state..(ch + 1) * n_state;
            block.a_log[range.clone()].copy_from_slice(&head.a_log);
            block.b[range.clone()].copy_from_slice(&head.b);
            block.c[range].copy_from_slice(&head.c);
            block.d_skip[ch] = head.d;
            block.dt_log[ch] = head.dt_log;
        }
        block.gate.fill(GATE_INIT);
        block.norm_scale.fill(1.0);
        Ok(block)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub n_classes: usize,
    pub d_model: usize,
    /// `n_classes × d_model`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Classifier {
    pub fn zeros(n_classes: usize, d_model: usize) -> Self {
        Self { n_classes, d_model, weight: vec![0.0; n_classes * d_model], bias: vec![0.0; n_classes] }
    }

    pub fn apply(&self, pooled: &[f64]) -> Vec<f64> {
        (0..self.n_classes)
            .map(|k| {
                self.bias[k]
                    + pooled.iter().zip(&self.weight[k * self.d_model..]).map(|(p, w)| p * w).sum::<f64>()
            })
            .collect()
    }
}

/// A view of one parameter tensor.
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub struct TensorMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub temporal_embed: Option<Conv1d>,
    pub spectral_embed: Option<Conv1d>,
    pub blocks: Vec<BlockWeights>,
    pub classifier: Classifier,
    pub ensemble: Option<EnsembleWeights>,
}

impl ModelWeights {
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let k = config.conv_kernel_len;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let temporal_embed = config.variant.uses_segment().then(|| Conv1d::init(d, d, k, &mut rng));
        let spectral_embed = config.variant.uses_features().then(|| Conv1d::init(d, d, k, &mut rng));
        let blocks = (0..config.n_blocks)
            .map(|_| BlockWeights::init(d, config.n_state, rng.random()))
            .collect::<Result<Vec<_>>>()?;
        let mut classifier = Classifier::zeros(config.n_classes, d);
        classifier
            .weight
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-CLASSIFIER_INIT_RANGE..CLASSIFIER_INIT_RANGE));
        let ensemble = config.optw.then(|| init_band_weights(config.n_classes));
        Ok(Self { config: config.clone(), temporal_embed, spectral_embed, blocks, classifier, ensemble })
    }

    /// Same layout, every entry zero (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.fill(0.0);
        }
        z
    }

    pub fn tensors<'a>(&'a self) -> Vec<TensorRef<'a>> {
        let mut out: Vec<TensorRef<'a>> = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, data: &'a [f64]| {
            out.push(TensorRef { name, shape, data });
        };
        for (prefix, conv) in [("temporal_embed", &self.temporal_embed), ("spectral_embed", &self.spectral_embed)] {
            if let Some(conv) = conv {
                push(format!("{prefix}.weight"), vec![conv.c_out, conv.c_in, conv.k], &conv.weight);
                push(format!("{prefix}.bias"), vec![conv.c_out], &conv.bias);
            }
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let (d, n) = (b.d_model, b.n_state);
            push(format!("blocks.{i}.a_log"), vec![d, n], &b.a_log);
            push(format!("blocks.{i}.b"), vec![d, n], &b.b);
            push(format!("blocks.{i}.c"), vec![d, n], &b.c);
            push(format!("blocks.{i}.d_skip"), vec![d], &b.d_skip);
            push(format!("blocks.{i}.dt_log"), vec![d], &b.dt_log);
            push(format!("blocks.{i}.gate"), vec![d], &b.gate);
            push(format!("blocks.{i}.norm_scale"), vec![d], &b.norm_scale);
            push(format!("blocks.{i}.norm_shift"), vec![d], &b.norm_shift);
        }
        let cls = &self.classifier;
        push("classifier.weight".into(), vec![cls.n_classes, cls.d_model], &cls.weight);
        push("classifier.bias".into(), vec![cls.n_classes], &cls.bias);
        if let Some(ens) = &self.ensemble {
            for (r, w) in ens.w.iter().enumerate() {
                push(format!("ensemble.{r}"), vec![ens.n_classes, ens.n_classes], w);
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut out: Vec<TensorMut<'_>> = Vec::new();
        let Self { temporal_embed, spectral_embed, blocks, classifier, ensemble, .. } = self;
        for (prefix, conv) in [("temporal_embed", temporal_embed), ("spectral_embed", spectral_embed)] {
            if let Some(conv) = conv {
                let shape = vec![conv.c_out, conv.c_in, conv.k];
                let c_out = conv.c_out;
                out.push(TensorMut { name: format!("{prefix}.weight"), shape, data: &mut conv.weight });
                out.push(TensorMut { name: format!("{prefix}.bias"), shape: vec![c_out], data: &mut conv.bias });
            }
        }
        for (i, b) in blocks.iter_mut().enumerate() {
            let (d, n) = (b.d_model, b.n_state);
            let BlockWeights { a_log, b: bb, c, d_skip, dt_log, gate, norm_scale, norm_shift, .. } = b;
            let entries: [(&str, Vec<usize>, &mut Vec<f64>); 8] = [
                ("a_log", vec![d, n], a_log),
                ("b", vec![d, n], bb),
                ("c", vec![d, n], c),
                ("d_skip", vec![d], d_skip),
                ("dt_log", vec![d], dt_log),
                ("gate", vec![d], gate),
                ("norm_scale", vec![d], norm_scale),
                ("norm_shift", vec![d], norm_shift),
            ];
            for (name, shape, data) in entries {
                out.push(TensorMut { name: format!("blocks.{i}.{name}"), shape, data });
            }
        }
        let (k, d) = (classifier.n_classes, classifier.d_model);
        out.push(TensorMut { name: "classifier.weight".into(), shape: vec![k, d], data: &mut classifier.weight });
        out.push(TensorMut { name: "classifier.bias".into(), shape: vec![k], data: &mut classifier.bias });
        if let Some(ens) = ensemble {
            let n = ens.n_classes;
            for (r, w) in ens.w.iter_mut().enumerate() {
                out.push(TensorMut { name: format!("ensemble.{r}"), shape: vec![n, n], data: w });
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// Parameters excluding the detachable ensemble layer.
    pub fn inference_param_count(&self) -> usize {
        self.tensors().iter().filter(|t| !t.name.starts_with("ensemble.")).map(|t| t.data.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.data.len();
            t.data.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat parameter vector length");
    }

    /// First tensor holding a non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors().into_iter().find(|t| t.data.iter().any(|v| !v.is_finite())).map(|t| t.name)
    }
}

/// Unnormalised class scores in HC, FTD, AD order.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(pub Vec<f64>);

impl Logits {
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Max-subtracted softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}

/// Model input; which parts are required depends on the variant.
#[derive(Debug, Clone, Copy, Default)]
pub struct ModelInput<'a> {
    pub segment: Option<ArrayView2<'a, f64>>,
    pub features: Option<&'a BandFeatures>,
}

pub fn forward(weights: &ModelWeights, input: ModelInput<'_>) -> Result<Logits> {
    Ok(Logits(forward_tape(weights, input)?.logits))
}

pub fn forward_temporal(segment: ArrayView2<'_, f64>, weights: &ModelWeights) -> Result<Logits> {
    expect_variant(weights, Variant::Temporal)?;
    forward(weights, ModelInput { segment: Some(segment), features: None })
}

pub fn forward_spectral(features: &BandFeatures, weights: &ModelWeights) -> Result<Logits> {
    expect_variant(weights, Variant::Spectral)?;
    forward(weights, ModelInput { segment: None, features: Some(features) })
}

pub fn forward_combined(segment: ArrayView2<'_, f64>, features: &BandFeatures, weights: &ModelWeights) -> Result<Logits> {
    expect_variant(weights, Variant::Combined)?;
    forward(weights, ModelInput { segment: Some(segment), features: Some(features) })
}

fn expect_variant(weights: &ModelWeights, v: Variant) -> Result<()> {
    if weights.config.variant != v {
        return Err(Error::invalid(format!("weights are for the {} variant, not {v}", weights.config.variant)));
    }
    Ok(())
}

#[cfg(test)]
mod tests;
