//! Confusion matrices, accuracy and the benchmark sweep.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::eeg_io::{DatasetManifest, EegRecording, Label, SplitPart};
use crate::error::{Error, Result};
use crate::model::{argmax, forward, save_checkpoint, Checkpoint, ModelConfig, ModelWeights, Variant};
use crate::pipeline::{prepare, ChannelSet, PrepConfig, PreparedSplit, DEFAULT_RATIOS};
use crate::training::{train, TrainConfig};

pub const N_CLASSES: usize = 3;

/// Rows are the true class, columns the prediction, order HC, FTD, AD.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N_CLASSES]; N_CLASSES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..N_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    /// Recall per true class; 0 for classes with no samples.
    pub fn recall(&self) -> [f64; N_CLASSES] {
        std::array::from_fn(|i| ratio(self.counts[i][i], self.counts[i].iter().sum()))
    }

    /// Precision per predicted class; 0 for classes never predicted.
    pub fn precision(&self) -> [f64; N_CLASSES] {
        std::array::from_fn(|j| ratio(self.counts[j][j], (0..N_CLASSES).map(|i| self.counts[i][j]).sum()))
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn confusion_matrix(preds: &[usize], labels: &[usize]) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::shape(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in preds.iter().zip(labels) {
        if p >= N_CLASSES || t >= N_CLASSES {
            return Err(Error::invalid(format!("class index out of range: true {t}, predicted {p}")));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

/// `trace / total`.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::invalid("accuracy of an empty confusion matrix"));
    }
    Ok(cm.trace() as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub precision: [f64; N_CLASSES],
    pub recall: [f64; N_CLASSES],
    /// Accuracy of the per-subject majority vote over segments.
    pub subject_accuracy: f64,
    pub n_segments: usize,
    pub n_subjects: usize,
}

/// Per-segment predictions of `weights` on `split`.
pub fn predict(weights: &ModelWeights, split: &PreparedSplit) -> Result<Vec<usize>> {
    let d = weights.config.d_model;
    if split.batch.n_channels() != d {
        return Err(Error::shape(format!(
            "geometry mismatch: model expects {d} channels, data has {}",
            split.batch.n_channels()
        )));
    }
    split
        .samples(weights.config.variant)
        .iter()
        .map(|s| forward(weights, s.input).map(|l| l.argmax()))
        .collect()
}

pub fn evaluate(weights: &ModelWeights, split: &PreparedSplit) -> Result<Metrics> {
    let preds = predict(weights, split)?;
    let labels = split.labels();
    let cm = confusion_matrix(&preds, &labels)?;
    let mut votes: BTreeMap<&str, ([usize; N_CLASSES], usize)> = BTreeMap::new();
    for (i, id) in split.batch.subject_ids.iter().enumerate() {
        let e = votes.entry(id.as_str()).or_insert(([0; N_CLASSES], labels[i]));
        e.0[preds[i]] += 1;
    }
    let correct = votes
        .values()
        .filter(|(v, y)| argmax(&v.map(|c| c as f64)) == *y)
        .count();
    Ok(Metrics {
        accuracy: accuracy(&cm)?,
        confusion: cm,
        precision: cm.precision(),
        recall: cm.recall(),
        subject_accuracy: correct as f64 / votes.len() as f64,
        n_segments: preds.len(),
        n_subjects: votes.len(),
    })
}

/// Matrix given in AD, HC, FTD order, permuted into HC, FTD, AD.
pub fn from_ad_hc_ftd(counts: [[u64; 3]; 3]) -> ConfusionMatrix {
    // Source index of each target class: HC ← 1, FTD ← 2, AD ← 0.
    let src = [1usize, 2, 0];
    ConfusionMatrix { counts: std::array::from_fn(|i| std::array::from_fn(|j| counts[src[i]][src[j]])) }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub variant: String,
    pub sample_rate_hz: String,
    pub channel_set: String,
    pub seg_seconds: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub variant: Variant,
    pub sample_rate_hz: f64,
    pub channel_set: String,
    pub n_channels: usize,
    pub seg_seconds: f64,
    pub status: String,
    pub accuracy_pct: Option<f64>,
    pub subject_accuracy_pct: Option<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub best_epoch: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
}

impl BenchTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::data(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::data(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::data(e.to_string()))
    }

    pub fn get(&self, variant: Variant, rate: f64, channel_set: &str, seg_seconds: f64) -> Option<&BenchRow> {
        self.rows.iter().find(|r| {
            r.variant == variant && r.sample_rate_hz == rate && r.channel_set == channel_set && r.seg_seconds == seg_seconds
        })
    }

    /// `max − min` of the available accuracies of one variant at one rate
    /// and channel set.
    pub fn spread(&self, variant: Variant, rate: f64, channel_set: &str) -> Option<f64> {
        let acc: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.variant == variant && r.sample_rate_hz == rate && r.channel_set == channel_set)
            .filter_map(|r| r.accuracy_pct)
            .collect();
        if acc.is_empty() {
            return None;
        }
        let max = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = acc.iter().copied().fold(f64::INFINITY, f64::min);
        Some(max - min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub variants: Vec<Variant>,
    pub seg_seconds: Vec<f64>,
    /// `None` keeps the recorded rate.
    pub rates: Vec<Option<f64>>,
    pub channel_sets: Vec<ChannelSet>,
    /// Width, state size and depth; variant, channels and seed are set
    /// per cell.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split_seed: u64,
    pub ratios: (f64, f64, f64),
    pub ckpt_dir: Option<PathBuf>,
}

impl BenchConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            variants: Variant::ALL.to_vec(),
            seg_seconds: vec![2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0],
            rates: vec![Some(500.0), Some(250.0), Some(125.0)],
            channel_sets: vec![ChannelSet::All],
            model: ModelConfig::default(),
            train: TrainConfig { seed, ..TrainConfig::default() },
            split_seed: seed,
            ratios: DEFAULT_RATIOS,
            ckpt_dir: None,
        }
    }
}

/// Seed of one sweep cell: the first 8 bytes of SHA-256 over the global
/// seed and the cell key.
pub fn cell_seed(global: u64, key: &CellKey) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    for part in [&key.variant, &key.sample_rate_hz, &key.channel_set, &key.seg_seconds] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn checkpoint_file_name(variant: Variant, rate: f64, n_channels: usize, seg_seconds: f64) -> String {
    format!("{variant}_{rate}hz_{n_channels}ch_{seg_seconds}s.json")
}

/// Train and evaluate one model per (variant, rate, channel set, segment
/// length). Cells whose data cannot be prepared or trained are reported
/// as absent.
pub fn bench_sweep(manifest: &DatasetManifest, recs: &[EegRecording], cfg: &BenchConfig) -> Result<BenchTable> {
    bench_sweep_with_progress(manifest, recs, cfg, &mut |_| {})
}

pub fn bench_sweep_with_progress(
    manifest: &DatasetManifest,
    recs: &[EegRecording],
    cfg: &BenchConfig,
    on_cell: &mut dyn FnMut(&BenchRow),
) -> Result<BenchTable> {
    let source_rate = recs.first().map(|r| r.sample_rate_hz).ok_or_else(|| Error::data("no recordings"))?;
    let mut table = BenchTable::default();
    for rate in &cfg.rates {
        let rate_hz = rate.unwrap_or(source_rate);
        for channels in &cfg.channel_sets {
            let n_channels = channels.resolve(&recs[0].channel_names).len();
            for &seg in &cfg.seg_seconds {
                let prep = PrepConfig {
                    target_rate_hz: *rate,
                    channels: channels.clone(),
                    seg_seconds: seg,
                    split_seed: cfg.split_seed,
                    ratios: cfg.ratios,
                    split_mode: crate::pipeline::SplitMode::Subject,
                    always_featurize: true,
                };
                let data = prepare(manifest, recs, &prep, Variant::Combined);
                for &variant in &cfg.variants {
                    let key = CellKey {
                        variant: variant.to_string(),
                        sample_rate_hz: rate_hz.to_string(),
                        channel_set: channels.to_string(),
                        seg_seconds: seg.to_string(),
                    };
                    let seed = cell_seed(cfg.train.seed, &key);
                    let mut row = BenchRow {
                        variant,
                        sample_rate_hz: rate_hz,
                        channel_set: channels.to_string(),
                        n_channels,
                        seg_seconds: seg,
                        status: "ok".into(),
                        accuracy_pct: None,
                        subject_accuracy_pct: None,
                        n_train: 0,
                        n_test: 0,
                        best_epoch: 0,
                        seed,
                    };
                    let result = data.as_ref().map_err(|e| Error::data(e.to_string())).and_then(|data| {
                        row.n_train = data.train.len();
                        row.n_test = data.test.len();
                        if data.train.is_empty() || data.val.is_empty() || data.test.is_empty() {
                            return Err(Error::data("a partition has no segments"));
                        }
                        let model = ModelConfig {
                            variant,
                            d_model: n_channels,
                            seed,
                            optw: false,
                            ..cfg.model.clone()
                        };
                        let tcfg = TrainConfig { seed, optw_enabled: false, ..cfg.train.clone() };
                        let outcome = train(&model, &data.train, &data.val, &tcfg)?;
                        let metrics = evaluate(&outcome.best, &data.test)?;
                        if let Some(dir) = &cfg.ckpt_dir {
                            let ckpt = Checkpoint { weights: outcome.best.clone(), train: Some(tcfg), data: Some(prep.clone()) };
                            save_checkpoint(&dir.join(checkpoint_file_name(variant, rate_hz, n_channels, seg)), &ckpt)?;
                        }
                        Ok((metrics, outcome.best_epoch))
                    });
                    match result {
                        Ok((m, best_epoch)) => {
                            row.accuracy_pct = Some(100.0 * m.accuracy);
                            row.subject_accuracy_pct = Some(100.0 * m.subject_accuracy);
                            row.best_epoch = best_epoch;
                        }
                        Err(e @ Error::Io { .. }) => return Err(e),
                        Err(e) => row.status = format!("absent: {e}"),
                    }
                    on_cell(&row);
                    table.rows.push(row);
                }
            }
        }
    }
    Ok(table)
}

/// Evaluate a stored checkpoint on one partition of the dataset in `dir`,
/// rebuilding the preprocessing recorded in the checkpoint.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, dir: &Path, part: SplitPart) -> Result<Metrics> {
    let prep = ckpt
        .data
        .clone()
        .ok_or_else(|| Error::data("checkpoint carries no preprocessing record"))?;
    let data = crate::pipeline::load_and_prepare(dir, &prep, ckpt.weights.config.variant)?;
    evaluate(&ckpt.weights, data.part(part))
}

pub fn label_names() -> [&'static str; N_CLASSES] {
    Label::ALL.map(Label::as_str)
}
