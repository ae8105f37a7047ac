use super::*;
use ndarray::Array2;
use rand_distr::StandardNormal;

fn random_segment(d: usize, len: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((d, len), |_| rng.sample::<f64, _>(StandardNormal))
}

#[test]
fn softmax_examples() {
    let u = softmax(&[0.0, 0.0, 0.0]);
    assert!(u.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
    let s = softmax(&[1000.0, 0.0, 0.0]);
    assert!((s[0] - 1.0).abs() < 1e-12 && s[1] < 1e-12);
    let shifted = softmax(&[1.0 + 7.5, -2.0 + 7.5, 0.3 + 7.5]);
    let base = softmax(&[1.0, -2.0, 0.3]);
    for (a, b) in shifted.iter().zip(&base) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn argmax_breaks_ties_low() {
    assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    assert_eq!(argmax(&[2.0, 2.0, 2.0]), 0);
    assert_eq!(argmax(&softmax(&[2.0, 2.0, 1.0])), 0);
}

#[test]
fn default_combined_param_count_is_thousands() {
    let w = ModelWeights::init(&ModelConfig::default()).unwrap();
    let n = w.param_count();
    assert!((1_000..100_000).contains(&n), "{n}");
}

#[test]
fn flatten_round_trip() {
    let mut cfg = ModelConfig::new(Variant::Combined, 4);
    cfg.optw = true;
    let w = ModelWeights::init(&cfg).unwrap();
    let flat = w.flatten();
    assert_eq!(flat.len(), w.param_count());
    let mut z = w.zeros_like();
    assert!(z.flatten().iter().all(|&v| v == 0.0));
    z.assign_flat(&flat);
    assert_eq!(z, w);
}

#[test]
fn optw_rejected_for_temporal() {
    let mut cfg = ModelConfig::new(Variant::Temporal, 4);
    cfg.optw = true;
    assert!(ModelWeights::init(&cfg).is_err());
}

#[test]
fn forward_is_deterministic() {
    let w = ModelWeights::init(&ModelConfig::new(Variant::Temporal, 5)).unwrap();
    let x = random_segment(5, 120, 3);
    let a = forward_temporal(x.view(), &w).unwrap();
    let b = forward_temporal(x.view(), &w).unwrap();
    assert_eq!(a, b);
}

#[test]
fn variant_mismatch_and_geometry_are_errors() {
    let w = ModelWeights::init(&ModelConfig::new(Variant::Temporal, 5)).unwrap();
    let x = random_segment(6, 64, 1);
    assert!(matches!(forward_temporal(x.view(), &w), Err(Error::Shape(_))));
    let f = BandFeatures { values: Array2::zeros((5, 5)) };
    assert!(forward_spectral(&f, &w).is_err());
}

#[test]
fn no_future_leakage_before_pooling() {
    let w = ModelWeights::init(&ModelConfig::new(Variant::Temporal, 4)).unwrap();
    let x = random_segment(4, 80, 9);
    let mut cut = x.clone();
    let t0 = 37;
    cut.slice_mut(ndarray::s![.., t0..]).fill(0.0);
    let a = forward_tape(&w, ModelInput { segment: Some(x.view()), features: None }).unwrap();
    let b = forward_tape(&w, ModelInput { segment: Some(cut.view()), features: None }).unwrap();
    for (ca, cb) in a.blocks.iter().zip(&b.blocks) {
        for c in 0..4 {
            assert_eq!(ca.input.row(c)[..t0], cb.input.row(c)[..t0]);
            assert_eq!(ca.s[c][..t0], cb.s[c][..t0]);
        }
    }
}

#[test]
fn combined_runs_spectral_after_temporal() {
    let w = ModelWeights::init(&ModelConfig::new(Variant::Combined, 3)).unwrap();
    let x = random_segment(3, 40, 2);
    let f = BandFeatures { values: random_segment(3, 5, 4) };
    let tape = forward_tape(&w, ModelInput { segment: Some(x.view()), features: Some(&f) }).unwrap();
    assert_eq!(tape.temporal_len, 40);
    assert_eq!(tape.encoded_len, 45);
    assert!(forward_combined(x.view(), &f, &w).is_ok());
}

#[test]
fn checkpoint_round_trip_and_version_check() {
    let mut cfg = ModelConfig::new(Variant::Spectral, 3);
    cfg.optw = true;
    let w = ModelWeights::init(&cfg).unwrap();
    let ckpt = Checkpoint { weights: w, train: None, data: None };
    let json = ckpt.to_json().unwrap();
    assert_eq!(Checkpoint::from_json(&json).unwrap(), ckpt);
    let bumped = json.replace("\"format_version\": 1", "\"format_version\": 2");
    assert!(Checkpoint::from_json(&bumped).unwrap_err().to_string().contains("format_version"));
}

#[test]
fn checkpoint_stores_nested_arrays() {
    let w = ModelWeights::init(&ModelConfig::new(Variant::Temporal, 2)).unwrap();
    let json = Checkpoint { weights: w, train: None, data: None }.to_json().unwrap();
    let doc: serde_json::Value = serde_json::from_str(&json).unwrap();
    let conv = &doc["weights"]["temporal_embed.weight"];
    assert_eq!(conv.as_array().unwrap().len(), 2);
    assert_eq!(conv[0].as_array().unwrap().len(), 2);
    assert_eq!(conv[0][0].as_array().unwrap().len(), 5);
}
