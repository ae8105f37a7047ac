//! Layer forward passes and their adjoints.
//!
//! Sequences are `channels × len`, row-major, in a plain `Vec<f64>`.

use crate::error::{Error, Result};
use crate::ssm::{self, DiscreteSsm, SsmParams};

use super::{BlockWeights, Conv1d};

/// Variance floor of the running normalisation.
pub const NORM_EPS: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Seq {
    pub channels: usize,
    pub len: usize,
    pub data: Vec<f64>,
}

impl Seq {
    pub fn zeros(channels: usize, len: usize) -> Self {
        Self { channels, len, data: vec![0.0; channels * len] }
    }

    pub fn from_view(x: ndarray::ArrayView2<'_, f64>) -> Self {
        let (channels, len) = x.dim();
        Self { channels, len, data: x.iter().copied().collect() }
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn row_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.len..(c + 1) * self.len]
    }

    /// Join along time: `[a | b]`.
    pub fn concat_time(a: &Seq, b: &Seq) -> Seq {
        assert_eq!(a.channels, b.channels);
        let mut out = Seq::zeros(a.channels, a.len + b.len);
        for c in 0..a.channels {
            let row = out.row_mut(c);
            row[..a.len].copy_from_slice(a.row(c));
            row[a.len..].copy_from_slice(b.row(c));
        }
        out
    }

    /// Split along time at `at`.
    pub fn split_time(&self, at: usize) -> (Seq, Seq) {
        let mut a = Seq::zeros(self.channels, at);
        let mut b = Seq::zeros(self.channels, self.len - at);
        for c in 0..self.channels {
            let row = self.row(c);
            a.row_mut(c).copy_from_slice(&row[..at]);
            b.row_mut(c).copy_from_slice(&row[at..]);
        }
        (a, b)
    }

    /// Mean over time per channel.
    pub fn mean_pool(&self) -> Vec<f64> {
        (0..self.channels).map(|c| self.row(c).iter().sum::<f64>() / self.len as f64).collect()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Causal channel-mixing convolution, taps indexed by lag:
/// `y[o][t] = bias[o] + Σ_i Σ_j w[o][i][j] · x[i][t − j]` with zeros
/// before `t = 0`.
pub fn conv1d_forward(conv: &Conv1d, x: &Seq) -> Result<Seq> {
    if x.channels != conv.c_in {
        return Err(Error::shape(format!(
            "conv expects {} input channels, got {}",
            conv.c_in, x.channels
        )));
    }
    if x.len < conv.k {
        return Err(Error::shape(format!(
            "sequence of length {} shorter than conv kernel {}",
            x.len, conv.k
        )));
    }
    let len = x.len;
    let mut y = Seq::zeros(conv.c_out, len);
    for o in 0..conv.c_out {
        let out = y.row_mut(o);
        out.iter_mut().for_each(|v| *v = conv.bias[o]);
        for i in 0..conv.c_in {
            let xi = x.row(i);
            for j in 0..conv.k {
                let w = conv.weight[(o * conv.c_in + i) * conv.k + j];
                for (yt, xt) in out[j..].iter_mut().zip(&xi[..len - j]) {
                    *yt += w * xt;
                }
            }
        }
    }
    Ok(y)
}

/// Accumulates `∂L/∂w` and `∂L/∂bias` into `grad` (input gradient is not
/// needed: embeddings sit directly on the data).
pub fn conv1d_backward(conv: &Conv1d, x: &Seq, gy: &Seq, grad: &mut Conv1d) {
    let len = x.len;
    for o in 0..conv.c_out {
        let g = gy.row(o);
        grad.bias[o] += g.iter().sum::<f64>();
        for i in 0..conv.c_in {
            let xi = x.row(i);
            for j in 0..conv.k {
                let acc: f64 = g[j..].iter().zip(&xi[..len - j]).map(|(a, b)| a * b).sum();
                grad.weight[(o * conv.c_in + i) * conv.k + j] += acc;
            }
        }
    }
}

/// Running (causal) standardisation statistics for one row.
#[derive(Debug, Clone, PartialEq)]
pub struct NormCache {
    /// `x − x[0]`; the output is shift invariant and the shift keeps the
    /// running sums well conditioned for signals with a DC offset.
    pub centred: Vec<f64>,
    pub mean: Vec<f64>,
    pub rstd: Vec<f64>,
}

/// `z[t] = (x[t] − μ_t) / sqrt(v_t + ε)` with `μ_t`, `v_t` the mean and
/// (biased) variance of `x[0..=t]`.
pub fn causal_norm_forward(x: &[f64]) -> (Vec<f64>, NormCache) {
    let shift = x.first().copied().unwrap_or(0.0);
    let centred: Vec<f64> = x.iter().map(|v| v - shift).collect();
    let mut z = Vec::with_capacity(x.len());
    let mut mean_v = Vec::with_capacity(x.len());
    let mut rstd_v = Vec::with_capacity(x.len());
    let (mut mean, mut m2) = (0.0, 0.0);
    for (t, &xt) in centred.iter().enumerate() {
        let n = (t + 1) as f64;
        let delta = xt - mean;
        mean += delta / n;
        m2 += delta * (xt - mean);
        let rstd = 1.0 / (m2 / n + NORM_EPS).sqrt();
        z.push((xt - mean) * rstd);
        mean_v.push(mean);
        rstd_v.push(rstd);
    }
    (z, NormCache { centred, mean: mean_v, rstd: rstd_v })
}

/// Adjoint of [`causal_norm_forward`]:
/// `∂z_t/∂x_τ = δ_{tτ} r_t − r_t/n_t − r_t³ (x_t − μ_t)(x_τ − μ_t)/n_t`.
pub fn causal_norm_backward(cache: &NormCache, gz: &[f64]) -> Vec<f64> {
    let len = gz.len();
    let mut gx = vec![0.0; len];
    // Suffix sums over t ≥ τ of the three τ-independent factors.
    let (mut s_r, mut s_q, mut s_qmu) = (0.0, 0.0, 0.0);
    for t in (0..len).rev() {
        let n = (t + 1) as f64;
        let r = cache.rstd[t];
        let mu = cache.mean[t];
        let q = gz[t] * r * r * r * (cache.centred[t] - mu) / n;
        s_r += gz[t] * r / n;
        s_q += q;
        s_qmu += q * mu;
        gx[t] = gz[t] * r - s_r - (cache.centred[t] * s_q - s_qmu);
    }
    gx
}

pub(crate) fn head_params(block: &BlockWeights, c: usize) -> SsmParams {
    let n = block.n_state;
    let range = c * n..(c + 1) * n;
    SsmParams {
        a_log: block.a_log[range.clone()].to_vec(),
        b: block.b[range.clone()].to_vec(),
        c: block.c[range].to_vec(),
        d: block.d_skip[c],
        dt_log: block.dt_log[c],
    }
}

/// Per-channel intermediate values of one encoder block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCache {
    pub input: Seq,
    pub z: Vec<Vec<f64>>,
    pub s: Vec<Vec<f64>>,
    pub norm: Vec<NormCache>,
    pub disc: Vec<DiscreteSsm>,
}

/// `y = x + g ⊙ SSM(u) ⊙ σ(u)` with `u = γ·norm(x) + β`, per channel.
pub fn block_forward(block: &BlockWeights, x: &Seq) -> Result<(Seq, BlockCache)> {
    if x.channels != block.d_model {
        return Err(Error::shape(format!(
            "block width {} but input has {} channels",
            block.d_model, x.channels
        )));
    }
    let mut y = x.clone();
    let mut zs = Vec::with_capacity(x.channels);
    let mut ss = Vec::with_capacity(x.channels);
    let mut norms = Vec::with_capacity(x.channels);
    let mut discs = Vec::with_capacity(x.channels);
    for c in 0..x.channels {
        let (z, norm) = causal_norm_forward(x.row(c));
        let (gamma, beta) = (block.norm_scale[c], block.norm_shift[c]);
        let u: Vec<f64> = z.iter().map(|v| gamma * v + beta).collect();
        let params = head_params(block, c);
        let disc = ssm::discretize_zoh(&params).map_err(|e| match e {
            Error::Data(msg) => Error::Divergence(format!("encoder channel {c}: {msg}")),
            other => other,
        })?;
        let mut s: Vec<f64> = u.iter().map(|v| params.d * v).collect();
        ssm::scan_accumulate(&disc, &params.c, &u, &mut s);
        let g = block.gate[c];
        for ((yt, &st), &ut) in y.row_mut(c).iter_mut().zip(&s).zip(&u) {
            *yt += g * st * sigmoid(ut);
        }
        if y.row(c).iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!("non-finite activation in encoder channel {c}")));
        }
        zs.push(z);
        ss.push(s);
        norms.push(norm);
        discs.push(disc);
    }
    Ok((y, BlockCache { input: x.clone(), z: zs, s: ss, norm: norms, disc: discs }))
}

/// Accumulates parameter gradients into `grad` and returns `∂L/∂x`.
pub fn block_backward(block: &BlockWeights, cache: &BlockCache, gy: &Seq, grad: &mut BlockWeights) -> Result<Seq> {
    let n = block.n_state;
    let mut gx = gy.clone();
    for c in 0..gy.channels {
        let (gamma, beta, g) = (block.norm_scale[c], block.norm_shift[c], block.gate[c]);
        let z = &cache.z[c];
        let s = &cache.s[c];
        let gyc = gy.row(c);
        let u: Vec<f64> = z.iter().map(|v| gamma * v + beta).collect();
        let mut g_gate = 0.0;
        let mut gs = vec![0.0; u.len()];
        let mut gu = vec![0.0; u.len()];
        for t in 0..u.len() {
            let sig = sigmoid(u[t]);
            g_gate += gyc[t] * s[t] * sig;
            gs[t] = gyc[t] * g * sig;
            gu[t] = gyc[t] * g * s[t] * sig * (1.0 - sig);
        }
        grad.gate[c] += g_gate;

        let params = head_params(block, c);
        let sg = ssm::scan_backward(&cache.disc[c], &params.c, params.d, &u, &gs)?;
        let (g_alog, g_b, g_dt) = ssm::zoh_backward(&params, &sg.a_bar, &sg.b_bar);
        for i in 0..n {
            grad.a_log[c * n + i] += g_alog[i];
            grad.b[c * n + i] += g_b[i];
            grad.c[c * n + i] += sg.c[i];
        }
        grad.d_skip[c] += sg.d;
        grad.dt_log[c] += g_dt;

        let mut g_gamma = 0.0;
        let mut g_beta = 0.0;
        let mut gz = vec![0.0; u.len()];
        for t in 0..u.len() {
            let total = gu[t] + sg.x[t];
            g_gamma += total * z[t];
            g_beta += total;
            gz[t] = total * gamma;
        }
        grad.norm_scale[c] += g_gamma;
        grad.norm_shift[c] += g_beta;

        let from_norm = causal_norm_backward(&cache.norm[c], &gz);
        for (dst, v) in gx.row_mut(c).iter_mut().zip(from_norm) {
            *dst += v;
        }
    }
    Ok(gx)
}
