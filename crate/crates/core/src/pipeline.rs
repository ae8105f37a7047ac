//! Recording → model-ready splits: resample, pick channels, split,
//! segment and featurise.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::eeg_io::{
    apportion, load_dataset, resample, select_channels, split_dataset, DatasetManifest, EegRecording, Label, SplitPart,
    MONTAGE_10_20,
};
use crate::error::{Error, Result};
use crate::model::{ModelInput, Variant};
use crate::segmentation::{segment, SegmentBatch};
use crate::spectral::{segment_features, Band, BandFeatures};
use crate::training::Sample;

pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.6, 0.2, 0.2);

/// Reduced 10–20 subsets used by the channel sweeps.
pub const CHANNELS_12: [&str; 12] = ["Fp1", "Fp2", "F3", "F4", "T3", "C3", "C4", "T4", "P3", "P4", "O1", "O2"];
pub const CHANNELS_6: [&str; 6] = ["F3", "F4", "C3", "C4", "O1", "O2"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Every subject lands in exactly one partition.
    Subject,
    /// Segments are pooled and split, so a subject can appear in several
    /// partitions.
    Segment,
}

impl FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subject" => Ok(SplitMode::Subject),
            "segment" => Ok(SplitMode::Segment),
            other => Err(Error::invalid(format!("unknown split mode {other:?}"))),
        }
    }
}

/// Named channel selection.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelSet {
    All,
    Names(Vec<String>),
}

impl ChannelSet {
    /// Channels actually used for a recording with `available` channels.
    pub fn resolve(&self, available: &[String]) -> Vec<String> {
        match self {
            ChannelSet::All => available.to_vec(),
            ChannelSet::Names(v) => v.clone(),
        }
    }

    pub fn preset(n: usize) -> Result<ChannelSet> {
        match n {
            19 => Ok(ChannelSet::All),
            12 => Ok(ChannelSet::Names(CHANNELS_12.iter().map(|s| s.to_string()).collect())),
            6 => Ok(ChannelSet::Names(CHANNELS_6.iter().map(|s| s.to_string()).collect())),
            _ => Err(Error::invalid(format!("no channel preset with {n} channels (19, 12, 6)"))),
        }
    }
}

impl fmt::Display for ChannelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelSet::All => f.write_str("all"),
            ChannelSet::Names(v) => f.write_str(&v.join("+")),
        }
    }
}

impl FromStr for ChannelSet {
    type Err = Error;

    /// `all`, a preset size (`19`, `12`, `6`) or a comma list of names.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "all" {
            return Ok(ChannelSet::All);
        }
        if let Ok(n) = s.parse::<usize>() {
            return ChannelSet::preset(n);
        }
        let names: Vec<String> =
            s.split([',', '+']).map(str::trim).filter(|n| !n.is_empty()).map(String::from).collect();
        if names.is_empty() {
            return Err(Error::invalid("empty channel list"));
        }
        Ok(ChannelSet::Names(names))
    }
}

/// Preprocessing recipe, stored in checkpoints so evaluation rebuilds the
/// same geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepConfig {
    /// Decimation target; `None` keeps the recorded rate.
    pub target_rate_hz: Option<f64>,
    pub channels: ChannelSet,
    pub seg_seconds: f64,
    pub split_seed: u64,
    pub ratios: (f64, f64, f64),
    pub split_mode: SplitMode,
    /// Compute band features even if the variant does not need them.
    #[serde(default)]
    pub always_featurize: bool,
}

impl PrepConfig {
    pub fn new(seg_seconds: f64, split_seed: u64) -> Self {
        Self {
            target_rate_hz: None,
            channels: ChannelSet::All,
            seg_seconds,
            split_seed,
            ratios: DEFAULT_RATIOS,
            split_mode: SplitMode::Subject,
            always_featurize: false,
        }
    }
}

/// Segments of one partition plus their band features (empty when the
/// variant ignores them).
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSplit {
    pub batch: SegmentBatch,
    pub features: Vec<BandFeatures>,
}

impl PreparedSplit {
    pub fn len(&self) -> usize {
        self.batch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batch.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.batch.labels.iter().map(|l| l.index()).collect()
    }

    pub fn samples(&self, variant: Variant) -> Vec<Sample<'_>> {
        (0..self.len())
            .map(|i| Sample {
                input: ModelInput {
                    segment: variant.uses_segment().then(|| self.batch.patch(i)),
                    features: if variant.uses_features() { self.features.get(i) } else { None },
                },
                label: self.batch.labels[i].index(),
            })
            .collect()
    }

    fn select(&self, idx: &[usize]) -> PreparedSplit {
        let batch = SegmentBatch {
            data: self.batch.data.select(ndarray::Axis(0), idx),
            seg_seconds: self.batch.seg_seconds,
            sample_rate_hz: self.batch.sample_rate_hz,
            labels: idx.iter().map(|&i| self.batch.labels[i]).collect(),
            subject_ids: idx.iter().map(|&i| self.batch.subject_ids[i].clone()).collect(),
        };
        let features = if self.features.is_empty() { Vec::new() } else { idx.iter().map(|&i| self.features[i].clone()).collect() };
        PreparedSplit { batch, features }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub train: PreparedSplit,
    pub val: PreparedSplit,
    pub test: PreparedSplit,
    pub channel_names: Vec<String>,
    pub sample_rate_hz: f64,
}

impl PreparedData {
    pub fn part(&self, part: SplitPart) -> &PreparedSplit {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Val => &self.val,
            SplitPart::Test => &self.test,
        }
    }
}

/// Resample and subset one recording according to `cfg`.
pub fn condition_recording(rec: &EegRecording, cfg: &PrepConfig) -> Result<EegRecording> {
    let rec = match cfg.target_rate_hz {
        Some(rate) if (rate - rec.sample_rate_hz).abs() > 1e-9 => resample(rec, rate)?,
        _ => rec.clone(),
    };
    match &cfg.channels {
        ChannelSet::All => Ok(rec),
        ChannelSet::Names(names) => select_channels(&rec, names),
    }
}

fn featurize(batch: &SegmentBatch) -> Result<Vec<BandFeatures>> {
    (0..batch.len()).map(|j| segment_features(batch.patch(j), batch.sample_rate_hz)).collect()
}

pub fn prepare(manifest: &DatasetManifest, recs: &[EegRecording], cfg: &PrepConfig, variant: Variant) -> Result<PreparedData> {
    let conditioned = recs.iter().map(|r| condition_recording(r, cfg)).collect::<Result<Vec<_>>>()?;
    let first = conditioned.first().ok_or_else(|| Error::data("dataset has no recordings"))?;
    let (rate, names) = (first.sample_rate_hz, first.channel_names.clone());
    if let Some(bad) = conditioned.iter().find(|r| r.sample_rate_hz != rate || r.channel_names != names) {
        return Err(Error::data(format!(
            "recording {} has a different rate or montage than {}",
            bad.subject_id, first.subject_id
        )));
    }
    let with_features = variant.uses_features() || cfg.always_featurize;
    let mut per_rec = Vec::with_capacity(conditioned.len());
    for rec in &conditioned {
        let batch = segment(rec, cfg.seg_seconds)?;
        let features = if with_features { featurize(&batch)? } else { Vec::new() };
        per_rec.push(PreparedSplit { batch, features });
    }
    let all = concat_splits(&per_rec)?;

    let parts: [Vec<usize>; 3] = match cfg.split_mode {
        SplitMode::Subject => {
            let split = split_dataset(manifest, cfg.ratios, cfg.split_seed)?;
            let mut parts: [Vec<usize>; 3] = Default::default();
            for (i, id) in all.batch.subject_ids.iter().enumerate() {
                let p = match split.part_of(id) {
                    Some(SplitPart::Train) => 0,
                    Some(SplitPart::Val) => 1,
                    Some(SplitPart::Test) => 2,
                    None => return Err(Error::data(format!("subject {id} missing from the manifest"))),
                };
                parts[p].push(i);
            }
            parts
        }
        SplitMode::Segment => split_segments(&all.batch.labels, cfg.ratios, cfg.split_seed),
    };
    Ok(PreparedData {
        train: all.select(&parts[0]),
        val: all.select(&parts[1]),
        test: all.select(&parts[2]),
        channel_names: names,
        sample_rate_hz: rate,
    })
}

pub fn load_and_prepare(dir: &Path, cfg: &PrepConfig, variant: Variant) -> Result<PreparedData> {
    let (manifest, recs) = load_dataset(dir)?;
    prepare(&manifest, &recs, cfg, variant)
}

fn concat_splits(parts: &[PreparedSplit]) -> Result<PreparedSplit> {
    let batches: Vec<SegmentBatch> = parts.iter().map(|p| p.batch.clone()).collect();
    Ok(PreparedSplit {
        batch: SegmentBatch::concat(&batches)?,
        features: parts.iter().flat_map(|p| p.features.iter().cloned()).collect(),
    })
}

/// Label-stratified segment-level partition, each part in index order.
fn split_segments(labels: &[Label], ratios: (f64, f64, f64), seed: u64) -> [Vec<usize>; 3] {
    let mut by_class: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(*l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: [Vec<usize>; 3] = Default::default();
    for idx in by_class.values_mut() {
        idx.shuffle(&mut rng);
        let counts = apportion(idx.len(), [ratios.0, ratios.1, ratios.2]);
        let mut it = idx.iter().copied();
        for p in 0..3 {
            parts[p].extend(it.by_ref().take(counts[p]));
        }
    }
    parts.iter_mut().for_each(|p| p.sort_unstable());
    parts
}

/// Long-format band-power table: one row per segment, channel and band.
pub fn features_csv(split: &PreparedSplit, channel_names: &[String]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["subject_id", "label", "segment", "channel", "band", "log_power"])
        .map_err(|e| Error::data(e.to_string()))?;
    let mut seg_in_subject: BTreeMap<&str, usize> = BTreeMap::new();
    for (j, f) in split.features.iter().enumerate() {
        let id = split.batch.subject_ids[j].as_str();
        let k = seg_in_subject.entry(id).or_insert(0);
        for (c, name) in channel_names.iter().enumerate() {
            for band in Band::ALL {
                w.write_record([
                    id,
                    split.batch.labels[j].as_str(),
                    &k.to_string(),
                    name,
                    band.name(),
                    &f.values[[c, band.index()]].to_string(),
                ])
                .map_err(|e| Error::data(e.to_string()))?;
            }
        }
        *k += 1;
    }
    let bytes = w.into_inner().map_err(|e| Error::data(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::data(e.to_string()))
}

/// Whether every named channel exists in the standard montage.
pub fn is_montage_subset(names: &[String]) -> bool {
    names.iter().all(|n| MONTAGE_10_20.contains(&n.as_str()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eeg_io::{synthesize_dataset, SynthSpec};

    #[test]
    fn channel_set_parsing() {
        assert_eq!("all".parse::<ChannelSet>().unwrap(), ChannelSet::All);
        assert_eq!("6".parse::<ChannelSet>().unwrap(), ChannelSet::preset(6).unwrap());
        assert_eq!(
            "O1, O2".parse::<ChannelSet>().unwrap(),
            ChannelSet::Names(vec!["O1".into(), "O2".into()])
        );
        assert!("7".parse::<ChannelSet>().is_err());
        assert!(is_montage_subset(&CHANNELS_12.map(String::from)));
    }

    #[test]
    fn subject_split_keeps_subjects_apart() {
        let (recs, manifest) = synthesize_dataset(&SynthSpec::new(3, 10.0, 125.0, 3)).unwrap();
        let data = prepare(&manifest, &recs, &PrepConfig::new(2.0, 1), Variant::Combined).unwrap();
        let total = data.train.len() + data.val.len() + data.test.len();
        assert_eq!(total, 9 * 5);
        for a in &data.train.batch.subject_ids {
            assert!(!data.test.batch.subject_ids.contains(a));
            assert!(!data.val.batch.subject_ids.contains(a));
        }
        assert_eq!(data.train.features.len(), data.train.len());
    }

    #[test]
    fn segment_split_covers_everything_once() {
        let (recs, manifest) = synthesize_dataset(&SynthSpec::new(2, 10.0, 125.0, 4)).unwrap();
        let mut cfg = PrepConfig::new(2.0, 1);
        cfg.split_mode = SplitMode::Segment;
        let data = prepare(&manifest, &recs, &cfg, Variant::Temporal).unwrap();
        assert_eq!(data.train.len() + data.val.len() + data.test.len(), 6 * 5);
        assert!(data.train.features.is_empty());
    }

    #[test]
    fn conditioning_resamples_and_selects() {
        let (recs, _) = synthesize_dataset(&SynthSpec::new(1, 10.0, 500.0, 5)).unwrap();
        let mut cfg = PrepConfig::new(2.0, 0);
        cfg.target_rate_hz = Some(125.0);
        cfg.channels = ChannelSet::preset(6).unwrap();
        let r = condition_recording(&recs[0], &cfg).unwrap();
        assert_eq!(r.sample_rate_hz, 125.0);
        assert_eq!(r.n_channels(), 6);
        assert_eq!(r.n_samples(), 1250);
    }
}
