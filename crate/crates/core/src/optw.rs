//! Band-specific ensemble bottleneck.
//!
//! Each band `r` owns a square matrix `W^r` applied to the shared class
//! probabilities `ξ`: `m^r = W^r ξ`, `ψ^r = softmax(m^r)`. The loss sums
//! cross-entropy of every `ψ^r` against the (replicated) true label, and
//! the gradient reaching the bottleneck is `Σ_r (W^r)ᵀ ∂E/∂m^r`.
//!
//! After training the layer is dropped: prediction uses `argmax ξ` only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::softmax;
use crate::spectral::N_BANDS;
use crate::training::{cross_entropy_unchecked, CE_EPS};

/// `R` stacked `n_classes × n_classes` matrices, band order Delta → Gamma.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights {
    pub n_classes: usize,
    /// Row-major matrices, one per band.
    pub w: Vec<Vec<f64>>,
}

impl EnsembleWeights {
    pub fn n_heads(&self) -> usize {
        self.w.len()
    }

    pub fn from_matrices(n_classes: usize, w: Vec<Vec<f64>>) -> Result<Self> {
        if w.iter().any(|m| m.len() != n_classes * n_classes) {
            return Err(Error::shape(format!("every W^r must be {n_classes}x{n_classes}")));
        }
        Ok(Self { n_classes, w })
    }

    fn apply(&self, r: usize, xi: &[f64]) -> Vec<f64> {
        let n = self.n_classes;
        (0..n).map(|i| (0..n).map(|j| self.w[r][i * n + j] * xi[j]).sum()).collect()
    }

    fn apply_transposed(&self, r: usize, g: &[f64]) -> Vec<f64> {
        let n = self.n_classes;
        (0..n).map(|j| (0..n).map(|i| self.w[r][i * n + j] * g[i]).sum()).collect()
    }
}

/// Every `W^r` starts as the identity.
pub fn init_crowd_weights(r: usize, n_classes: usize) -> Result<EnsembleWeights> {
    if r < 1 {
        return Err(Error::invalid("need at least one ensemble head"));
    }
    let mut eye = vec![0.0; n_classes * n_classes];
    for i in 0..n_classes {
        eye[i * n_classes + i] = 1.0;
    }
    Ok(EnsembleWeights { n_classes, w: vec![eye; r] })
}

/// Identity heads for the five EEG bands.
pub fn init_band_weights(n_classes: usize) -> EnsembleWeights {
    init_crowd_weights(N_BANDS, n_classes).expect("five heads")
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutput {
    pub m: Vec<Vec<f64>>,
    pub psi: Vec<Vec<f64>>,
}

fn check_probability(xi: &[f64], n: usize) -> Result<()> {
    if xi.len() != n {
        return Err(Error::shape(format!("probability vector has {} entries, expected {n}", xi.len())));
    }
    let sum: f64 = xi.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || xi.iter().any(|p| !(p.is_finite() && *p >= -1e-12)) {
        return Err(Error::invalid(format!("not a probability vector (sum {sum})")));
    }
    Ok(())
}

/// Shared-bottleneck forward: every head reads the same `ξ`.
pub fn ensemble_forward(xi: &[f64], weights: &EnsembleWeights) -> Result<EnsembleOutput> {
    let xis = vec![xi.to_vec(); weights.n_heads()];
    ensemble_forward_per_head(&xis, weights)
}

/// Forward where head `r` reads its own `ξ_r`.
pub fn ensemble_forward_per_head(xis: &[Vec<f64>], weights: &EnsembleWeights) -> Result<EnsembleOutput> {
    if xis.len() != weights.n_heads() {
        return Err(Error::shape(format!("{} inputs for {} heads", xis.len(), weights.n_heads())));
    }
    let mut m = Vec::with_capacity(xis.len());
    let mut psi = Vec::with_capacity(xis.len());
    for (r, xi) in xis.iter().enumerate() {
        check_probability(xi, weights.n_classes)?;
        let mr = weights.apply(r, xi);
        psi.push(softmax(&mr));
        m.push(mr);
    }
    Ok(EnsembleOutput { m, psi })
}

/// `E = Σ_r CE(ψ^r, y)`.
pub fn ensemble_loss(output: &EnsembleOutput, y: usize) -> Result<f64> {
    let n = output.psi.first().map_or(0, Vec::len);
    if y >= n {
        return Err(Error::invalid(format!("label {y} out of range for {n} classes")));
    }
    Ok(output.psi.iter().map(|p| cross_entropy_unchecked(p, y)).sum())
}

/// `∂E/∂m^r` for every head (exact, including the log floor).
pub fn ensemble_loss_grad(output: &EnsembleOutput, y: usize) -> Vec<Vec<f64>> {
    output
        .psi
        .iter()
        .map(|p| {
            let kappa = p[y] / (p[y] + CE_EPS);
            p.iter()
                .enumerate()
                .map(|(c, &pc)| kappa * (pc - if c == y { 1.0 } else { 0.0 }))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleGrads {
    /// `∂E/∂ξ_r` per head; sum them for a shared `ξ`.
    pub xi: Vec<Vec<f64>>,
    /// `∂E/∂W^r = (∂E/∂m^r) ξ_rᵀ`, row-major.
    pub w: Vec<Vec<f64>>,
}

impl EnsembleGrads {
    pub fn xi_total(&self) -> Vec<f64> {
        let n = self.xi.first().map_or(0, Vec::len);
        (0..n).map(|c| self.xi.iter().map(|g| g[c]).sum()).collect()
    }
}

pub fn ensemble_backward(xi: &[f64], weights: &EnsembleWeights, grads_m: &[Vec<f64>]) -> Result<EnsembleGrads> {
    let xis = vec![xi.to_vec(); weights.n_heads()];
    ensemble_backward_per_head(&xis, weights, grads_m)
}

pub fn ensemble_backward_per_head(
    xis: &[Vec<f64>],
    weights: &EnsembleWeights,
    grads_m: &[Vec<f64>],
) -> Result<EnsembleGrads> {
    let n = weights.n_classes;
    if grads_m.len() != weights.n_heads()
        || xis.len() != weights.n_heads()
        || grads_m.iter().chain(xis).any(|g| g.len() != n)
    {
        return Err(Error::shape("ensemble gradient shapes do not match the weights"));
    }
    let xi = (0..weights.n_heads()).map(|r| weights.apply_transposed(r, &grads_m[r])).collect();
    let w = grads_m
        .iter()
        .zip(xis)
        .map(|(g, x)| (0..n * n).map(|k| g[k / n] * x[k % n]).collect())
        .collect();
    Ok(EnsembleGrads { xi, w })
}

/// Per-band diagonal dominance `trace(W^r) / Σ|W^r|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandReliability {
    pub scores: Vec<f64>,
}

impl BandReliability {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("band,score\n");
        for (r, s) in self.scores.iter().enumerate() {
            let name = crate::spectral::Band::ALL.get(r).map_or("extra", |b| b.name());
            out.push_str(&format!("{name},{s}\n"));
        }
        out
    }
}

pub fn band_weight_summary(weights: &EnsembleWeights) -> BandReliability {
    let n = weights.n_classes;
    let scores = weights
        .w
        .iter()
        .map(|m| {
            let trace: f64 = (0..n).map(|i| m[i * n + i]).sum();
            let total: f64 = m.iter().map(|v| v.abs()).sum();
            if total > 0.0 {
                trace / total
            } else {
                0.0
            }
        })
        .collect();
    BandReliability { scores }
}
