//! Python bindings for the `eegssm` pipeline.
//!
//! ```python
//! import eegssm
//! recs = eegssm.synthesize(3, 10.0, 125.0, seed=42)
//! eegssm.write_dataset("data", recs)
//! model, history = eegssm.train("data", "spectral", epochs=5)
//! print(eegssm.evaluate(model, "data", "test")["accuracy"])
//! ```

use std::path::PathBuf;

use numpy::{IntoPyArray, PyArray1, PyArray2, PyReadonlyArray1, PyReadonlyArray2};
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use eegssm::eeg_io::{self, DatasetManifest, EegRecording, Label, ManifestEntry, SplitPart, SynthSpec};
use eegssm::eval::evaluate_checkpoint;
use eegssm::model::{self, Checkpoint, ModelConfig, ModelInput, ModelWeights, Variant};
use eegssm::pipeline::{load_and_prepare, PrepConfig, SplitMode};
use eegssm::spectral::{self, BandFeatures, WelchConfig};
use eegssm::ssm::{self, SsmParams};
use eegssm::training::{self, GradCheckOptions, TrainConfig};
use eegssm::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Divergence(_) => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for eegssm::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// One multichannel recording.
#[pyclass(name = "Recording", module = "eegssm", from_py_object)]
#[derive(Clone)]
struct PyRecording {
    inner: EegRecording,
}

#[pymethods]
impl PyRecording {
    #[new]
    fn new(subject_id: String, label: &str, sample_rate_hz: f64, channel_names: Vec<String>, data: PyReadonlyArray2<'_, f64>) -> PyResult<Self> {
        let label: Label = label.parse().py()?;
        let inner = EegRecording::new(subject_id, label, sample_rate_hz, channel_names, data.as_array().to_owned()).py()?;
        Ok(Self { inner })
    }

    #[getter]
    fn subject_id(&self) -> &str {
        &self.inner.subject_id
    }

    #[getter]
    fn label(&self) -> &'static str {
        self.inner.label.as_str()
    }

    #[getter]
    fn sample_rate_hz(&self) -> f64 {
        self.inner.sample_rate_hz
    }

    #[getter]
    fn channel_names(&self) -> Vec<String> {
        self.inner.channel_names.clone()
    }

    #[getter]
    fn data<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray2<f64>> {
        self.inner.data.clone().into_pyarray(py)
    }

    fn resample(&self, target_hz: f64) -> PyResult<Self> {
        Ok(Self { inner: eeg_io::resample(&self.inner, target_hz).py()? })
    }

    fn select_channels(&self, names: Vec<String>) -> PyResult<Self> {
        Ok(Self { inner: eeg_io::select_channels(&self.inner, &names).py()? })
    }

    fn __repr__(&self) -> String {
        format!(
            "Recording({}, {}, {} channels x {} samples at {} Hz)",
            self.inner.subject_id,
            self.inner.label,
            self.inner.n_channels(),
            self.inner.n_samples(),
            self.inner.sample_rate_hz
        )
    }
}

/// Model weights plus the training and preprocessing records of a
/// checkpoint.
#[pyclass(name = "Model", module = "eegssm", skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    ckpt: Checkpoint,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (variant, d_model, n_state = 16, n_blocks = 2, seed = 0, optw = false))]
    fn new(variant: &str, d_model: usize, n_state: usize, n_blocks: usize, seed: u64, optw: bool) -> PyResult<Self> {
        let variant: Variant = variant.parse().py()?;
        let config = ModelConfig { n_state, n_blocks, seed, optw, ..ModelConfig::new(variant, d_model) };
        let weights = ModelWeights::init(&config).py()?;
        Ok(Self { ckpt: Checkpoint { weights, train: None, data: None } })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { ckpt: model::load_checkpoint(&path).py()? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        model::save_checkpoint(&path, &self.ckpt).py()
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.ckpt.weights.config.variant.as_str()
    }

    #[getter]
    fn d_model(&self) -> usize {
        self.ckpt.weights.config.d_model
    }

    fn param_count(&self) -> usize {
        self.ckpt.weights.param_count()
    }

    fn inference_param_count(&self) -> usize {
        self.ckpt.weights.inference_param_count()
    }

    /// Logits for one segment (`channels x samples`) and/or its band
    /// features (`channels x 5`), as the variant requires.
    #[pyo3(signature = (segment = None, features = None))]
    fn forward<'py>(
        &self,
        py: Python<'py>,
        segment: Option<PyReadonlyArray2<'py, f64>>,
        features: Option<PyReadonlyArray2<'py, f64>>,
    ) -> PyResult<Bound<'py, PyArray1<f64>>> {
        let feats = features.map(|f| BandFeatures { values: f.as_array().to_owned() });
        let seg = segment.as_ref().map(|s| s.as_array());
        let logits = model::forward(&self.ckpt.weights, ModelInput { segment: seg, features: feats.as_ref() }).py()?;
        Ok(logits.0.into_pyarray(py))
    }

    #[pyo3(signature = (segment = None, features = None))]
    fn predict(&self, segment: Option<PyReadonlyArray2<'_, f64>>, features: Option<PyReadonlyArray2<'_, f64>>) -> PyResult<&'static str> {
        let feats = features.map(|f| BandFeatures { values: f.as_array().to_owned() });
        let seg = segment.as_ref().map(|s| s.as_array());
        let logits = model::forward(&self.ckpt.weights, ModelInput { segment: seg, features: feats.as_ref() }).py()?;
        Ok(Label::from_index(logits.argmax()).expect("three classes").as_str())
    }

    fn to_json(&self) -> PyResult<String> {
        self.ckpt.to_json().py()
    }

    fn __repr__(&self) -> String {
        let c = &self.ckpt.weights.config;
        format!("Model({}, d_model={}, n_state={}, n_blocks={}, optw={})", c.variant, c.d_model, c.n_state, c.n_blocks, c.optw)
    }
}

#[pyfunction]
#[pyo3(signature = (subjects_per_class, duration_s, sample_rate_hz = 500.0, seed = 42))]
fn synthesize(subjects_per_class: usize, duration_s: f64, sample_rate_hz: f64, seed: u64) -> PyResult<Vec<PyRecording>> {
    let (recs, _) = eeg_io::synthesize_dataset(&SynthSpec::new(subjects_per_class, duration_s, sample_rate_hz, seed)).py()?;
    Ok(recs.into_iter().map(|inner| PyRecording { inner }).collect())
}

/// Write recordings in binary format with a manifest.
#[pyfunction]
fn write_dataset(dir: PathBuf, recordings: Vec<PyRecording>) -> PyResult<()> {
    let recs: Vec<EegRecording> = recordings.into_iter().map(|r| r.inner).collect();
    let entries = recs
        .iter()
        .map(|r| ManifestEntry {
            path: format!("{}.eegs", r.subject_id),
            subject_id: r.subject_id.clone(),
            label: r.label,
            sample_rate_hz: r.sample_rate_hz,
            channel_names: r.channel_names.clone(),
        })
        .collect();
    let manifest = DatasetManifest::new(entries).py()?;
    eeg_io::write_dataset(&dir, &recs, &manifest).py()
}

#[pyfunction]
fn load_dataset(dir: PathBuf) -> PyResult<Vec<PyRecording>> {
    let (_, recs) = eeg_io::load_dataset(&dir).py()?;
    Ok(recs.into_iter().map(|inner| PyRecording { inner }).collect())
}

/// `(freqs_hz, power)` with `power` shaped `channels x freqs`.
#[pyfunction]
fn welch_psd<'py>(py: Python<'py>, signal: PyReadonlyArray2<'py, f64>, fs: f64) -> PyResult<(Bound<'py, PyArray1<f64>>, Bound<'py, PyArray2<f64>>)> {
    let view = signal.as_array();
    let psd = spectral::welch_psd(view, fs, &WelchConfig::for_length(view.ncols())).py()?;
    Ok((psd.freqs_hz.into_pyarray(py), psd.power.into_pyarray(py)))
}

/// Log band powers, `channels x 5`, bands Delta to Gamma.
#[pyfunction]
fn band_features<'py>(py: Python<'py>, segment: PyReadonlyArray2<'py, f64>, fs: f64) -> PyResult<Bound<'py, PyArray2<f64>>> {
    Ok(spectral::segment_features(segment.as_array(), fs).py()?.values.into_pyarray(py))
}

fn ssm_params(a_log: Vec<f64>, b: Vec<f64>, c: Vec<f64>, d: f64, dt_log: f64) -> SsmParams {
    SsmParams { a_log, b, c, d, dt_log }
}

/// Recurrent evaluation of one diagonal SSM head from a zero state.
#[pyfunction]
fn ssm_scan<'py>(
    py: Python<'py>,
    a_log: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: f64,
    dt_log: f64,
    x: PyReadonlyArray1<'py, f64>,
) -> PyResult<Bound<'py, PyArray1<f64>>> {
    let p = ssm_params(a_log, b, c, d, dt_log);
    let disc = ssm::discretize_zoh(&p).py()?;
    let x = x.as_array().to_vec();
    Ok(ssm::scan(&disc, &p.c, p.d, &x).py()?.into_pyarray(py))
}

/// Convolution kernel of length `m` of one diagonal SSM head.
#[pyfunction]
fn ssm_kernel<'py>(py: Python<'py>, a_log: Vec<f64>, b: Vec<f64>, c: Vec<f64>, dt_log: f64, m: usize) -> PyResult<Bound<'py, PyArray1<f64>>> {
    let p = ssm_params(a_log, b, c, 0.0, dt_log);
    let disc = ssm::discretize_zoh(&p).py()?;
    Ok(ssm::kernel(&disc, &p.c, m).py()?.k.into_pyarray(py))
}

#[pyfunction]
#[pyo3(signature = (
    data_dir, variant = "combined", seg_seconds = 2.0, rate = None, channels = "all",
    epochs = 500, lr = 1e-3, batch_size = 32, seed = 0, optw = false, split_mode = "subject",
))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    data_dir: PathBuf,
    variant: &str,
    seg_seconds: f64,
    rate: Option<f64>,
    channels: &str,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
    optw: bool,
    split_mode: &str,
) -> PyResult<(PyModel, Vec<Bound<'py, PyDict>>)> {
    let variant: Variant = variant.parse().py()?;
    let mut prep = PrepConfig::new(seg_seconds, seed);
    prep.target_rate_hz = rate;
    prep.channels = channels.parse().py()?;
    prep.split_mode = split_mode.parse::<SplitMode>().py()?;
    let tcfg = TrainConfig { lr, epochs, batch_size, seed, optw_enabled: optw, ..TrainConfig::default() };
    let outcome = py
        .detach(|| -> eegssm::Result<_> {
            let data = load_and_prepare(&data_dir, &prep, variant)?;
            let model = ModelConfig { seed, optw, ..ModelConfig::new(variant, data.channel_names.len()) };
            training::train(&model, &data.train, &data.val, &tcfg)
        })
        .py()?;
    let history = outcome
        .history
        .records
        .iter()
        .map(|r| {
            let row = PyDict::new(py);
            row.set_item("epoch", r.epoch)?;
            row.set_item("train_loss", r.train_loss)?;
            row.set_item("val_loss", r.val_loss)?;
            row.set_item("val_acc", r.val_acc)?;
            Ok(row)
        })
        .collect::<PyResult<Vec<_>>>()?;
    let ckpt = Checkpoint { weights: outcome.best, train: Some(tcfg), data: Some(prep) };
    Ok((PyModel { ckpt }, history))
}

/// Metrics of a trained model on one partition of `data_dir`.
#[pyfunction]
#[pyo3(signature = (model, data_dir, split = "test"))]
fn evaluate<'py>(py: Python<'py>, model: &PyModel, data_dir: PathBuf, split: &str) -> PyResult<Bound<'py, PyDict>> {
    let part: SplitPart = split.parse().py()?;
    let metrics = py.detach(|| evaluate_checkpoint(&model.ckpt, &data_dir, part)).py()?;
    let out = PyDict::new(py);
    out.set_item("accuracy", metrics.accuracy)?;
    out.set_item("subject_accuracy", metrics.subject_accuracy)?;
    out.set_item("confusion", metrics.confusion.counts.to_vec())?;
    out.set_item("precision", metrics.precision.to_vec())?;
    out.set_item("recall", metrics.recall.to_vec())?;
    out.set_item("n_segments", metrics.n_segments)?;
    out.set_item("n_subjects", metrics.n_subjects)?;
    Ok(out)
}

/// `(max_rel_err, worst_tensor)` of the finite-difference check on a
/// miniature model.
#[pyfunction]
#[pyo3(signature = (variant, optw = false, seed = 0, h = 1e-5))]
fn grad_check(variant: &str, optw: bool, seed: u64, h: f64) -> PyResult<(f64, String)> {
    let variant: Variant = variant.parse().py()?;
    let opts = GradCheckOptions { h, seed, ..GradCheckOptions::default() };
    let report = training::grad_check(&training::miniature_config(variant, optw, seed), opts).py()?;
    Ok((report.max_rel_err, report.worst_tensor))
}

#[pymodule(name = "eegssm")]
fn eegssm_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRecording>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(write_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(welch_psd, m)?)?;
    m.add_function(wrap_pyfunction!(band_features, m)?)?;
    m.add_function(wrap_pyfunction!(ssm_scan, m)?)?;
    m.add_function(wrap_pyfunction!(ssm_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add("GRAD_CHECK_TOL", training::GRAD_CHECK_TOL)?;
    m.add("CLASSES", Label::ALL.map(Label::as_str).to_vec())?;
    Ok(())
}
