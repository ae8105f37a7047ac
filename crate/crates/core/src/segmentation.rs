//! Fixed-length, non-overlapping multichannel segments.

use ndarray::{s, Array2, Array3, ArrayView2, Axis};

use crate::eeg_io::{EegRecording, Label};
use crate::error::{Error, Result};

/// `N_seg × N_c × N_seq` stack of segments with per-segment provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentBatch {
    pub data: Array3<f64>,
    pub seg_seconds: f64,
    pub sample_rate_hz: f64,
    pub labels: Vec<Label>,
    pub subject_ids: Vec<String>,
}

impl SegmentBatch {
    pub fn len(&self) -> usize {
        self.data.len_of(Axis(0))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_channels(&self) -> usize {
        self.data.len_of(Axis(1))
    }

    pub fn seq_len(&self) -> usize {
        self.data.len_of(Axis(2))
    }

    pub fn patch(&self, j: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(0), j)
    }

    /// Stack batches that share geometry, preserving order.
    pub fn concat(batches: &[SegmentBatch]) -> Result<SegmentBatch> {
        let first = batches.first().ok_or_else(|| Error::invalid("no batches to concatenate"))?;
        if let Some(bad) = batches.iter().find(|b| {
            b.n_channels() != first.n_channels()
                || b.seq_len() != first.seq_len()
                || b.sample_rate_hz != first.sample_rate_hz
        }) {
            return Err(Error::shape(format!(
                "cannot concatenate {}x{} segments with {}x{}",
                bad.n_channels(),
                bad.seq_len(),
                first.n_channels(),
                first.seq_len()
            )));
        }
        let views: Vec<_> = batches.iter().map(|b| b.data.view()).collect();
        let data = ndarray::concatenate(Axis(0), &views).expect("geometry checked");
        Ok(SegmentBatch {
            data,
            seg_seconds: first.seg_seconds,
            sample_rate_hz: first.sample_rate_hz,
            labels: batches.iter().flat_map(|b| b.labels.iter().copied()).collect(),
            subject_ids: batches.iter().flat_map(|b| b.subject_ids.iter().cloned()).collect(),
        })
    }
}

/// Number of samples in one segment of `seg_seconds` at `fs`.
pub fn samples_per_segment(seg_seconds: f64, fs: f64) -> usize {
    (seg_seconds * fs).round() as usize
}

/// Cut `rec` into `floor(N_samples / N_seq)` contiguous segments; the
/// trailing remainder is dropped.
pub fn segment(rec: &EegRecording, seg_seconds: f64) -> Result<SegmentBatch> {
    if !(seg_seconds.is_finite() && seg_seconds > 0.0) {
        return Err(Error::invalid(format!("segment length must be positive, got {seg_seconds}")));
    }
    let n_seq = samples_per_segment(seg_seconds, rec.sample_rate_hz);
    if n_seq == 0 || rec.n_samples() < n_seq {
        return Err(Error::data(format!(
            "recording {} lasts {:.3} s, shorter than one {seg_seconds} s segment",
            rec.subject_id,
            rec.duration_s()
        )));
    }
    let n_seg = rec.n_samples() / n_seq;
    let mut data = Array3::zeros((n_seg, rec.n_channels(), n_seq));
    for j in 0..n_seg {
        data.index_axis_mut(Axis(0), j)
            .assign(&rec.data.slice(s![.., j * n_seq..(j + 1) * n_seq]));
    }
    Ok(SegmentBatch {
        data,
        seg_seconds,
        sample_rate_hz: rec.sample_rate_hz,
        labels: vec![rec.label; n_seg],
        subject_ids: vec![rec.subject_id.clone(); n_seg],
    })
}

/// Right-multiplication operator applied to every patch.
#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    Identity,
    Matrix(Array2<f64>),
}

/// Map every patch `t_p` to `t_p · S`.
pub fn project_patches(batch: &SegmentBatch, projection: &Projection) -> Result<SegmentBatch> {
    let s = match projection {
        Projection::Identity => return Ok(batch.clone()),
        Projection::Matrix(s) => s,
    };
    if s.nrows() != batch.seq_len() {
        return Err(Error::shape(format!(
            "projection has {} rows, patches have {} samples",
            s.nrows(),
            batch.seq_len()
        )));
    }
    let mut data = Array3::zeros((batch.len(), batch.n_channels(), s.ncols()));
    for j in 0..batch.len() {
        data.index_axis_mut(Axis(0), j).assign(&batch.patch(j).dot(s));
    }
    Ok(SegmentBatch { data, ..batch.clone() })
}
