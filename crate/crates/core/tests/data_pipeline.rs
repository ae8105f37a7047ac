use std::f64::consts::PI;

use ndarray::Array2;

use eegssm::eeg_io::{resample, synthesize_dataset, SynthSpec};
use eegssm::pipeline::{prepare, ChannelSet, PrepConfig, SplitMode};
use eegssm::segmentation::{samples_per_segment, segment};
use eegssm::spectral::{bandpass_filter, segment_features, Band};
use eegssm::model::Variant;

#[test]
fn chained_and_direct_resampling_agree() {
    let (recs, _) = synthesize_dataset(&SynthSpec::new(1, 20.0, 500.0, 42)).unwrap();
    for rec in &recs {
        let chained = resample(&resample(rec, 250.0).unwrap(), 125.0).unwrap();
        let direct = resample(rec, 125.0).unwrap();
        assert_eq!(chained.n_samples(), direct.n_samples());
        let a = segment_features(chained.data.view(), 125.0).unwrap();
        let b = segment_features(direct.data.view(), 125.0).unwrap();
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            let (px, py) = (x.exp(), y.exp());
            assert!((px - py).abs() / py <= 0.05, "{px} vs {py}");
        }
    }
}

#[test]
fn clinical_geometry_segment_count() {
    // Group totals in minutes and subject counts: AD, FTD, HC.
    let groups = [(485.5, 36usize), (276.5, 23), (402.0, 29)];
    let n_seq = samples_per_segment(2.0, 500.0);
    let mut count = 0;
    for (minutes, n) in groups {
        let samples = (minutes * 60.0 / n as f64 * 500.0) as usize;
        count += n * (samples / n_seq);
    }
    let whole = (1164.0 * 60.0 * 500.0) as usize / n_seq;
    assert_eq!(whole, 34_920);
    assert!(count <= whole && whole - count <= 88, "{count}");
    assert!((whole as f64 - 35_254.0).abs() / 35_254.0 < 0.01);
}

#[test]
fn segments_reproduce_synthetic_recording() {
    let (recs, _) = synthesize_dataset(&SynthSpec::new(1, 11.0, 125.0, 3)).unwrap();
    let batch = segment(&recs[0], 2.0).unwrap();
    assert_eq!(batch.len(), 5);
    for j in 0..batch.len() {
        let want = recs[0].data.slice(ndarray::s![.., j * 250..(j + 1) * 250]);
        assert_eq!(batch.patch(j), want);
    }
}

#[test]
fn band_filter_is_linear() {
    let fs = 250.0;
    let x = Array2::from_shape_fn((2, 1000), |(c, t)| (2.0 * PI * 6.0 * t as f64 / fs + c as f64).sin() + 0.1 * (t % 7) as f64);
    let base = bandpass_filter(x.view(), Band::Theta, fs).unwrap();
    let scaled = bandpass_filter((&x * 3.5).view(), Band::Theta, fs).unwrap();
    for (a, b) in scaled.iter().zip(base.iter()) {
        assert!((a - 3.5 * b).abs() <= 1e-12 * (1.0 + b.abs()));
    }
}

#[test]
fn subject_split_keeps_subjects_apart() {
    let (recs, manifest) = synthesize_dataset(&SynthSpec::new(3, 10.0, 125.0, 5)).unwrap();
    let data = prepare(&manifest, &recs, &PrepConfig::new(2.0, 1), Variant::Temporal).unwrap();
    let ids = |s: &eegssm::pipeline::PreparedSplit| s.batch.subject_ids.iter().cloned().collect::<std::collections::HashSet<_>>();
    let (tr, va, te) = (ids(&data.train), ids(&data.val), ids(&data.test));
    assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
    assert_eq!(data.train.len() + data.val.len() + data.test.len(), 9 * 5);
}

#[test]
fn segment_split_mixes_subjects() {
    let (recs, manifest) = synthesize_dataset(&SynthSpec::new(3, 10.0, 125.0, 5)).unwrap();
    let mut cfg = PrepConfig::new(2.0, 1);
    cfg.split_mode = SplitMode::Segment;
    cfg.channels = ChannelSet::preset(6).unwrap();
    let data = prepare(&manifest, &recs, &cfg, Variant::Spectral).unwrap();
    assert_eq!(data.channel_names.len(), 6);
    assert_eq!(data.train.len() + data.val.len() + data.test.len(), 45);
    assert_eq!(data.test.features.len(), data.test.len());
    let shared = data.test.batch.subject_ids.iter().filter(|id| data.train.batch.subject_ids.contains(id)).count();
    assert!(shared > 0);
}
