//! Central finite-difference check of the analytic gradients.

use ndarray::Array2;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::Result;
use crate::model::{ModelConfig, ModelInput, ModelWeights, Variant};
use crate::spectral::{BandFeatures, N_BANDS};

use super::backward::{batch_grad, sample_loss, Sample};

/// Denominator floor of the relative error, so coordinates whose true
/// gradient is at round-off level compare in absolute terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;
pub const GRAD_CHECK_TOL: f64 = 1e-4;
pub const MINI_SEQ_LEN: usize = 32;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub h: f64,
    pub coords_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { h: 1e-5, coords_per_tensor: 20, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_err: f64,
    pub worst_tensor: String,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Compares `batch_grad` (optionally altered by `corrupt`) against central
/// differences of the mean loss on a random subset of every tensor.
pub fn grad_check_weights(
    weights: &ModelWeights,
    samples: &[Sample<'_>],
    opts: GradCheckOptions,
    corrupt: Option<&dyn Fn(&mut ModelWeights)>,
) -> Result<GradCheckReport> {
    let (_, mut grad) = batch_grad(weights, samples)?;
    if let Some(f) = corrupt {
        f(&mut grad);
    }
    let mean_loss = |w: &ModelWeights| -> Result<f64> {
        let mut total = 0.0;
        for s in samples {
            total += sample_loss(w, s)?;
        }
        Ok(total / samples.len() as f64)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let layout: Vec<(String, usize)> = weights.tensors().into_iter().map(|t| (t.name, t.data.len())).collect();
    let grads: Vec<Vec<f64>> = grad.tensors().into_iter().map(|t| t.data.to_vec()).collect();
    let mut probe = weights.clone();
    let mut tensors = Vec::with_capacity(layout.len());
    for (ti, (name, len)) in layout.iter().enumerate() {
        let coords: Vec<usize> = if *len <= opts.coords_per_tensor {
            (0..*len).collect()
        } else {
            let mut v = sample_indices(&mut rng, *len, opts.coords_per_tensor).into_vec();
            v.sort_unstable();
            v
        };
        let mut worst = 0.0f64;
        for &k in &coords {
            let orig = probe.tensors()[ti].data[k];
            probe.tensors_mut()[ti].data[k] = orig + opts.h;
            let up = mean_loss(&probe)?;
            probe.tensors_mut()[ti].data[k] = orig - opts.h;
            let down = mean_loss(&probe)?;
            probe.tensors_mut()[ti].data[k] = orig;
            let numeric = (up - down) / (2.0 * opts.h);
            worst = worst.max(relative_error(grads[ti][k], numeric));
        }
        tensors.push(TensorCheck { name: name.clone(), checked: coords.len(), max_rel_err: worst });
    }
    let (worst_tensor, max_rel_err) = tensors
        .iter()
        .fold((String::new(), 0.0f64), |acc, t| if t.max_rel_err > acc.1 { (t.name.clone(), t.max_rel_err) } else { acc });
    Ok(GradCheckReport { tensors, max_rel_err, worst_tensor })
}

/// Small model used by the gradient check: 3 channels, 4 states, 2 blocks.
pub fn miniature_config(variant: Variant, optw: bool, seed: u64) -> ModelConfig {
    ModelConfig {
        variant,
        d_model: 3,
        n_state: 4,
        n_blocks: 2,
        n_classes: 3,
        conv_kernel_len: 3,
        seed,
        optw,
    }
}

/// Random inputs for a miniature model.
pub struct MiniBatch {
    pub segments: Vec<Array2<f64>>,
    pub features: Vec<BandFeatures>,
    pub labels: Vec<usize>,
}

impl MiniBatch {
    pub fn random(config: &ModelConfig, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
        let segments = (0..n).map(|_| Array2::from_shape_fn((d, MINI_SEQ_LEN), |_| normal(&mut rng))).collect();
        let features = (0..n)
            .map(|_| BandFeatures { values: Array2::from_shape_fn((d, N_BANDS), |_| normal(&mut rng)) })
            .collect();
        let labels = (0..n).map(|_| rng.random_range(0..config.n_classes)).collect();
        Self { segments, features, labels }
    }

    pub fn samples(&self, variant: Variant) -> Vec<Sample<'_>> {
        (0..self.labels.len())
            .map(|i| Sample {
                input: ModelInput {
                    segment: variant.uses_segment().then(|| self.segments[i].view()),
                    features: variant.uses_features().then(|| &self.features[i]),
                },
                label: self.labels[i],
            })
            .collect()
    }
}

/// Initialised weights moved off their structured starting point so every
/// tensor has a generic gradient.
pub fn perturbed_weights(config: &ModelConfig, scale: f64) -> Result<ModelWeights> {
    let mut w = ModelWeights::init(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    for t in w.tensors_mut() {
        t.data.iter_mut().for_each(|v| *v += scale * rng.random_range(-1.0..1.0));
    }
    Ok(w)
}

/// Gradient check of a miniature model of `config`'s variant.
pub fn grad_check(config: &ModelConfig, opts: GradCheckOptions) -> Result<GradCheckReport> {
    let weights = perturbed_weights(config, 0.3)?;
    let batch = MiniBatch::random(config, 2, opts.seed.wrapping_add(1));
    grad_check_weights(&weights, &batch.samples(config.variant), opts, None)
}
