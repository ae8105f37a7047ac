use eegssm::eeg_io::{synthesize_dataset, SynthSpec};
use eegssm::eval::{bench_sweep, evaluate_checkpoint, checkpoint_file_name, BenchConfig};
use eegssm::eeg_io::{write_dataset, SplitPart};
use eegssm::model::{load_checkpoint, ModelConfig, Variant};
use eegssm::pipeline::{prepare, PrepConfig};
use eegssm::training::{train, TrainConfig};

#[test]
fn smoothed_training_loss_does_not_increase() {
    let (recs, manifest) = synthesize_dataset(&SynthSpec::new(5, 20.0, 125.0, 42)).unwrap();
    let data = prepare(&manifest, &recs, &PrepConfig::new(2.0, 42), Variant::Spectral).unwrap();
    let model = ModelConfig { seed: 42, ..ModelConfig::new(Variant::Spectral, 19) };
    let cfg = TrainConfig { epochs: 50, seed: 42, ..TrainConfig::default() };
    let out = train(&model, &data.train, &data.val, &cfg).unwrap();
    let loss: Vec<f64> = out.history.records.iter().map(|r| r.train_loss).collect();
    let smooth: Vec<f64> = loss.windows(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
    for w in smooth.windows(2) {
        assert!(w[1] <= w[0], "{smooth:?}");
    }
}

#[test]
fn history_length_and_repeatability() {
    let (recs, manifest) = synthesize_dataset(&SynthSpec::new(3, 10.0, 125.0, 1)).unwrap();
    let data = prepare(&manifest, &recs, &PrepConfig::new(2.0, 0), Variant::Combined).unwrap();
    let mut model = ModelConfig::new(Variant::Combined, 19);
    model.optw = true;
    let cfg = TrainConfig { epochs: 1, optw_enabled: true, ..TrainConfig::default() };
    let a = train(&model, &data.train, &data.val, &cfg).unwrap();
    let b = train(&model, &data.train, &data.val, &cfg).unwrap();
    assert_eq!(a.history.len(), 1);
    assert_eq!(a.history, b.history);
    assert_eq!(a.best, b.best);
    assert!(a.best.ensemble.is_some());
}

#[test]
fn combined_validation_accuracy_on_synthetic_data() {
    let (recs, manifest) = synthesize_dataset(&SynthSpec::new(10, 20.0, 250.0, 42)).unwrap();
    let data = prepare(&manifest, &recs, &PrepConfig::new(2.0, 42), Variant::Combined).unwrap();
    let model = ModelConfig { seed: 42, ..ModelConfig::new(Variant::Combined, 19) };
    let cfg = TrainConfig { epochs: 30, seed: 42, ..TrainConfig::default() };
    let out = train(&model, &data.train, &data.val, &cfg).unwrap();
    let best = out.history.records[out.best_epoch - 1].val_acc;
    assert!(best >= 0.95, "best validation accuracy {best}");
}

#[test]
fn bench_table_matches_stored_checkpoints() {
    let (recs, manifest) = synthesize_dataset(&SynthSpec::new(3, 12.0, 125.0, 8)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    write_dataset(&data_dir, &recs, &manifest).unwrap();
    let ckpts = dir.path().join("ckpt");
    std::fs::create_dir_all(&ckpts).unwrap();
    let mut cfg = BenchConfig::new(3);
    cfg.seg_seconds = vec![2.0, 4.0];
    cfg.rates = vec![None];
    cfg.train.epochs = 2;
    cfg.ckpt_dir = Some(ckpts.clone());
    let table = bench_sweep(&manifest, &recs, &cfg).unwrap();
    assert_eq!(table.rows.len(), 6);
    for row in &table.rows {
        let path = ckpts.join(checkpoint_file_name(row.variant, row.sample_rate_hz, row.n_channels, row.seg_seconds));
        let metrics = evaluate_checkpoint(&load_checkpoint(&path).unwrap(), &data_dir, SplitPart::Test).unwrap();
        assert_eq!(Some(100.0 * metrics.accuracy), row.accuracy_pct);
    }
}
