//! Forward pass with recorded intermediates and its reverse sweep.

use super::layers::{block_backward, block_forward, conv1d_backward, conv1d_forward, BlockCache, Seq};
use super::{Conv1d, ModelInput, ModelWeights};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Tape {
    pub segment: Option<Seq>,
    pub features: Option<Seq>,
    /// Length of the temporal part of the encoder sequence.
    pub temporal_len: usize,
    pub blocks: Vec<BlockCache>,
    pub encoded_len: usize,
    pub pooled: Vec<f64>,
    pub logits: Vec<f64>,
}

fn embed(conv: &Option<Conv1d>, x: Option<Seq>, what: &str, d_model: usize) -> Result<Option<(Seq, Seq)>> {
    match (conv, x) {
        (Some(conv), Some(x)) => {
            if x.channels != d_model {
                return Err(Error::shape(format!(
                    "{what} has {} channels, model expects {d_model}",
                    x.channels
                )));
            }
            let y = conv1d_forward(conv, &x)?;
            Ok(Some((x, y)))
        }
        (Some(_), None) => Err(Error::invalid(format!("this variant needs the {what}"))),
        (None, _) => Ok(None),
    }
}

pub fn forward_tape(weights: &ModelWeights, input: ModelInput<'_>) -> Result<Tape> {
    let d = weights.config.d_model;
    let seg = embed(&weights.temporal_embed, input.segment.map(Seq::from_view), "segment", d)?;
    let feat = embed(
        &weights.spectral_embed,
        input.features.map(|f| Seq::from_view(f.values.view())),
        "band features",
        d,
    )?;
    let (segment, features, temporal_len, mut h) = match (seg, feat) {
        (Some((sx, sy)), Some((fx, fy))) => {
            let len = sy.len;
            (Some(sx), Some(fx), len, Seq::concat_time(&sy, &fy))
        }
        (Some((sx, sy)), None) => (Some(sx), None, sy.len, sy),
        (None, Some((fx, fy))) => (None, Some(fx), 0, fy),
        (None, None) => return Err(Error::invalid("model has no embedding")),
    };
    let mut caches = Vec::with_capacity(weights.blocks.len());
    for block in &weights.blocks {
        let (y, cache) = block_forward(block, &h)?;
        caches.push(cache);
        h = y;
    }
    let pooled = pool(&h, segment.is_some() && features.is_some(), temporal_len);
    let logits = weights.classifier.apply(&pooled);
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence("non-finite logits".into()));
    }
    Ok(Tape { segment, features, temporal_len, blocks: caches, encoded_len: h.len, pooled, logits })
}

/// Mean over time; the combined sequence averages the means of its
/// temporal and spectral parts so the short band axis is not swamped.
fn pool(h: &Seq, split: bool, temporal_len: usize) -> Vec<f64> {
    if !split {
        return h.mean_pool();
    }
    let (a, b) = h.split_time(temporal_len);
    a.mean_pool().iter().zip(b.mean_pool()).map(|(x, y)| 0.5 * (x + y)).collect()
}

/// Accumulates `∂L/∂θ` into `grad` given `∂L/∂logits`.
pub fn backward_tape(weights: &ModelWeights, tape: &Tape, g_logits: &[f64], grad: &mut ModelWeights) -> Result<()> {
    let cls = &weights.classifier;
    let d = cls.d_model;
    let mut g_pool = vec![0.0; d];
    for (k, &gk) in g_logits.iter().enumerate() {
        grad.classifier.bias[k] += gk;
        for c in 0..d {
            grad.classifier.weight[k * d + c] += gk * tape.pooled[c];
            g_pool[c] += gk * cls.weight[k * d + c];
        }
    }
    let len = tape.encoded_len;
    let mut gh = Seq::zeros(d, len);
    let split = tape.segment.is_some() && tape.features.is_some();
    for c in 0..d {
        let row = gh.row_mut(c);
        if split {
            let t = tape.temporal_len;
            row[..t].fill(0.5 * g_pool[c] / t as f64);
            row[t..].fill(0.5 * g_pool[c] / (len - t) as f64);
        } else {
            row.fill(g_pool[c] / len as f64);
        }
    }
    for (i, block) in weights.blocks.iter().enumerate().rev() {
        gh = block_backward(block, &tape.blocks[i], &gh, &mut grad.blocks[i])?;
    }
    let (g_seg, g_feat) = match (&tape.segment, &tape.features) {
        (Some(_), Some(_)) => {
            let (a, b) = gh.split_time(tape.temporal_len);
            (Some(a), Some(b))
        }
        (Some(_), None) => (Some(gh), None),
        _ => (None, Some(gh)),
    };
    if let (Some(x), Some(g), Some(conv), Some(gconv)) =
        (&tape.segment, &g_seg, &weights.temporal_embed, grad.temporal_embed.as_mut())
    {
        conv1d_backward(conv, x, g, gconv);
    }
    if let (Some(x), Some(g), Some(conv), Some(gconv)) =
        (&tape.features, &g_feat, &weights.spectral_embed, grad.spectral_embed.as_mut())
    {
        conv1d_backward(conv, x, g, gconv);
    }
    Ok(())
}
