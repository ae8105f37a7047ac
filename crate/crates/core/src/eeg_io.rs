//! Recording I/O, resampling, channel selection, synthetic data and
//! subject-level splitting.
//!
//! On-disk format (`.eegs`): magic `EEGS`, `u32` version, `u32` channel
//! count, `u64` sample count, then `n_channels * n_samples` little-endian
//! `f32` values in row-major order. Each file has a JSON sidecar
//! `<file>.json` carrying subject id, label, rate and channel names.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::Band;

pub const BINARY_MAGIC: &[u8; 4] = b"EEGS";
pub const BINARY_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// The 19-electrode 10–20 montage, in dataset order.
pub const MONTAGE_10_20: [&str; 19] = [
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "T3", "C3", "Cz", "C4", "T4", "T5", "P3", "Pz",
    "P4", "T6", "O1", "O2",
];

/// Diagnostic class. The index order HC=0, FTD=1, AD=2 is used everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "HC")]
    Hc,
    #[serde(rename = "FTD")]
    Ftd,
    #[serde(rename = "AD")]
    Ad,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Hc, Label::Ftd, Label::Ad];

    pub fn index(self) -> usize {
        match self {
            Label::Hc => 0,
            Label::Ftd => 1,
            Label::Ad => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Hc => "HC",
            Label::Ftd => "FTD",
            Label::Ad => "AD",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "HC" => Ok(Label::Hc),
            "FTD" => Ok(Label::Ftd),
            "AD" => Ok(Label::Ad),
            other => Err(Error::data(format!("unknown label {other:?}"))),
        }
    }
}

/// One subject's multichannel signal (rows = channels, µV).
#[derive(Debug, Clone, PartialEq)]
pub struct EegRecording {
    pub subject_id: String,
    pub label: Label,
    pub sample_rate_hz: f64,
    pub channel_names: Vec<String>,
    pub data: Array2<f64>,
}

impl EegRecording {
    pub fn new(
        subject_id: impl Into<String>,
        label: Label,
        sample_rate_hz: f64,
        channel_names: Vec<String>,
        data: Array2<f64>,
    ) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::data(format!("sample rate must be positive, got {sample_rate_hz}")));
        }
        if data.nrows() != channel_names.len() {
            return Err(Error::shape(format!(
                "{} data rows but {} channel names",
                data.nrows(),
                channel_names.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite sample in recording"));
        }
        Ok(Self { subject_id: subject_id.into(), label, sample_rate_hz, channel_names, data })
    }

    pub fn n_channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.sample_rate_hz
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub subject_id: String,
    pub label: Label,
    pub sample_rate_hz: f64,
    pub channel_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let manifest = Self { format_version: MANIFEST_VERSION, entries };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != MANIFEST_VERSION {
            return Err(Error::data(format!(
                "unsupported manifest format_version {}",
                self.format_version
            )));
        }
        let mut seen = HashSet::new();
        for entry in &self.entries {
            if !seen.insert(entry.subject_id.as_str()) {
                return Err(Error::data(format!("duplicate subject_id {:?}", entry.subject_id)));
            }
        }
        if let Some(first) = self.entries.first() {
            if let Some(bad) = self.entries.iter().find(|e| e.channel_names != first.channel_names)
            {
                return Err(Error::data(format!(
                    "channel list of {:?} differs from {:?}",
                    bad.subject_id, first.subject_id
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Self = serde_json::from_str(&text)
            .map_err(|e| Error::data(format!("bad manifest {}: {e}", path.display())))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn subject_ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.subject_id.clone()).collect()
    }
}

/// JSON sidecar stored next to each binary recording.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    subject_id: String,
    label: Label,
    sample_rate_hz: f64,
    channel_names: Vec<String>,
    n_channels: usize,
    n_samples: usize,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Write `rec` as `.eegs` (values narrowed to `f32`) plus its JSON sidecar.
pub fn write_binary(rec: &EegRecording, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(BINARY_MAGIC).map_err(io)?;
    w.write_all(&BINARY_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(rec.n_channels() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&(rec.n_samples() as u64).to_le_bytes()).map_err(io)?;
    for v in rec.data.iter() {
        w.write_all(&(*v as f32).to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)?;

    let sidecar = Sidecar {
        subject_id: rec.subject_id.clone(),
        label: rec.label,
        sample_rate_hz: rec.sample_rate_hz,
        channel_names: rec.channel_names.clone(),
        n_channels: rec.n_channels(),
        n_samples: rec.n_samples(),
    };
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"))
        .map_err(|e| Error::io(&side, e))
}

fn read_binary_matrix(path: &Path) -> Result<Array2<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || &bytes[..4] != BINARY_MAGIC {
        return Err(Error::data(format!("{}: missing EEGS header", path.display())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != BINARY_VERSION {
        return Err(Error::data(format!("{}: unsupported version {version}", path.display())));
    }
    let n_ch = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let n_s = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let payload = &bytes[20..];
    if payload.len() != n_ch * n_s * 4 {
        return Err(Error::shape(format!(
            "{}: header says {n_ch}x{n_s} but payload holds {} values",
            path.display(),
            payload.len() / 4
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Array2::from_shape_vec((n_ch, n_s), values).expect("shape checked"))
}

fn read_csv_matrix(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let n_ch = header.len();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); n_ch];
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        if record.len() != n_ch {
            return Err(Error::shape(format!(
                "{}: row {} has {} fields, header has {n_ch}",
                path.display(),
                row_idx + 1,
                record.len()
            )));
        }
        for (col, field) in columns.iter_mut().zip(record.iter()) {
            let v: f64 = field.parse().map_err(|_| {
                Error::data(format!("{}: unparseable value {field:?}", path.display()))
            })?;
            col.push(v);
        }
    }
    let n_s = columns.first().map_or(0, Vec::len);
    let flat: Vec<f64> = columns.into_iter().flatten().collect();
    Ok((header, Array2::from_shape_vec((n_ch, n_s), flat).expect("rectangular")))
}

/// Load one recording. `.csv` files are read as a header row of channel
/// names followed by one row per time sample; everything else is read as
/// `.eegs` binary with its sidecar.
pub fn load_recording(path: impl AsRef<Path>, entry: &ManifestEntry) -> Result<EegRecording> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let data = if is_csv {
        let (header, data) = read_csv_matrix(path)?;
        if header != entry.channel_names {
            return Err(Error::data(format!(
                "{}: CSV header {:?} does not match manifest channels {:?}",
                path.display(),
                header,
                entry.channel_names
            )));
        }
        data
    } else {
        let data = read_binary_matrix(path)?;
        let side = sidecar_path(path);
        if side.exists() {
            let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            let sidecar: Sidecar = serde_json::from_str(&text)
                .map_err(|e| Error::data(format!("bad sidecar {}: {e}", side.display())))?;
            if sidecar.n_channels != data.nrows() || sidecar.n_samples != data.ncols() {
                return Err(Error::shape(format!(
                    "{}: sidecar shape {}x{} disagrees with file {}x{}",
                    path.display(),
                    sidecar.n_channels,
                    sidecar.n_samples,
                    data.nrows(),
                    data.ncols()
                )));
            }
            if sidecar.channel_names != entry.channel_names {
                return Err(Error::data(format!(
                    "{}: sidecar channels do not match manifest",
                    path.display()
                )));
            }
        }
        if data.nrows() != entry.channel_names.len() {
            return Err(Error::shape(format!(
                "{}: {} channels in file, {} in manifest",
                path.display(),
                data.nrows(),
                entry.channel_names.len()
            )));
        }
        data
    };
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::data(format!("{}: non-finite sample", path.display())));
    }
    EegRecording::new(
        entry.subject_id.clone(),
        entry.label,
        entry.sample_rate_hz,
        entry.channel_names.clone(),
        data,
    )
}

/// Load every recording listed in `dir/manifest.json`.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(DatasetManifest, Vec<EegRecording>)> {
    let dir = dir.as_ref();
    let manifest = DatasetManifest::load(dir.join(MANIFEST_FILE))?;
    let recs = manifest
        .entries
        .iter()
        .map(|e| load_recording(dir.join(&e.path), e))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, recs))
}

/// Write recordings and their manifest into `dir` (created if missing).
pub fn write_dataset(
    dir: impl AsRef<Path>,
    recs: &[EegRecording],
    manifest: &DatasetManifest,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (rec, entry) in recs.iter().zip(&manifest.entries) {
        write_binary(rec, dir.join(&entry.path))?;
    }
    manifest.save(dir.join(MANIFEST_FILE))
}

pub const ANTI_ALIAS_TAPS: usize = 101;

/// Hamming-windowed sinc low-pass with unit DC gain. `cutoff` is in
/// cycles/sample (0 < cutoff < 0.5).
pub fn lowpass_fir(n_taps: usize, cutoff: f64) -> Vec<f64> {
    let mid = (n_taps - 1) as f64 / 2.0;
    let mut h: Vec<f64> = (0..n_taps)
        .map(|i| {
            let x = i as f64 - mid;
            let sinc = if x == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * std::f64::consts::PI * cutoff * x).sin() / (std::f64::consts::PI * x)
            };
            let window = 0.54
                - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n_taps - 1) as f64).cos();
            sinc * window
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// Odd (point-symmetric) extension by `pad` samples at both ends.
pub(crate) fn odd_extend(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let pad = pad.min(n.saturating_sub(1));
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    out.extend_from_slice(x);
    out.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    out
}

/// Zero-phase FIR filter (forward then backward) evaluated only at
/// `start, start + step, ...` and returning `count` samples.
fn filtfilt_fir_decimate(x: &[f64], h: &[f64], step: usize, count: usize) -> Vec<f64> {
    let pad = (3 * h.len()).min(x.len().saturating_sub(1));
    let xp = odd_extend(x, pad);
    let n = xp.len();
    let forward: Vec<f64> = (0..n)
        .map(|t| {
            let jmax = h.len().min(t + 1);
            (0..jmax).map(|j| h[j] * xp[t - j]).sum()
        })
        .collect();
    (0..count)
        .map(|m| {
            let t = pad + m * step;
            let jmax = h.len().min(n - t);
            (0..jmax).map(|j| h[j] * forward[t + j]).sum()
        })
        .collect()
}

/// Decimate by an integer factor after a zero-phase anti-alias low-pass
/// (101-tap Hamming sinc, cutoff at 0.8 × the target Nyquist).
pub fn resample(rec: &EegRecording, target_hz: f64) -> Result<EegRecording> {
    if !(target_hz.is_finite() && target_hz > 0.0) {
        return Err(Error::invalid(format!("target rate must be positive, got {target_hz}")));
    }
    if target_hz >= rec.sample_rate_hz {
        return Err(Error::invalid(format!(
            "target rate {target_hz} Hz must be below source rate {} Hz",
            rec.sample_rate_hz
        )));
    }
    let ratio = rec.sample_rate_hz / target_hz;
    let factor = ratio.round();
    if (ratio - factor).abs() > 1e-9 * ratio {
        return Err(Error::invalid(format!(
            "non-integer decimation: {} Hz -> {target_hz} Hz",
            rec.sample_rate_hz
        )));
    }
    let factor = factor as usize;
    let cutoff = 0.8 * (target_hz / 2.0) / rec.sample_rate_hz;
    let h = lowpass_fir(ANTI_ALIAS_TAPS, cutoff);
    let count = rec.n_samples() / factor;
    let mut data = Array2::zeros((rec.n_channels(), count));
    for (c, row) in rec.data.rows().into_iter().enumerate() {
        let x = row.to_vec();
        let y = filtfilt_fir_decimate(&x, &h, factor, count);
        data.row_mut(c).iter_mut().zip(y).for_each(|(d, v)| *d = v);
    }
    EegRecording::new(
        rec.subject_id.clone(),
        rec.label,
        target_hz,
        rec.channel_names.clone(),
        data,
    )
}

/// Subset and reorder channels by name.
pub fn select_channels<S: AsRef<str>>(rec: &EegRecording, names: &[S]) -> Result<EegRecording> {
    let rows = names
        .iter()
        .map(|n| {
            rec.channel_names
                .iter()
                .position(|c| c == n.as_ref())
                .ok_or_else(|| Error::data(format!("unknown channel {:?}", n.as_ref())))
        })
        .collect::<Result<Vec<_>>>()?;
    let data = rec.data.select(ndarray::Axis(0), &rows);
    Ok(EegRecording {
        subject_id: rec.subject_id.clone(),
        label: rec.label,
        sample_rate_hz: rec.sample_rate_hz,
        channel_names: names.iter().map(|n| n.as_ref().to_string()).collect(),
        data,
    })
}

/// Parameters for [`synthesize_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub subjects_per_class: usize,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub seed: u64,
    pub channel_names: Vec<String>,
}

impl SynthSpec {
    pub fn new(subjects_per_class: usize, duration_s: f64, sample_rate_hz: f64, seed: u64) -> Self {
        Self {
            subjects_per_class,
            duration_s,
            sample_rate_hz,
            seed,
            channel_names: MONTAGE_10_20.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Relative band variance per class, band order Delta → Gamma.
pub fn class_band_profile(label: Label) -> [f64; 5] {
    match label {
        Label::Hc => [1.0, 1.0, 4.0, 1.0, 0.4],
        Label::Ftd => [1.5, 3.0, 2.0, 1.0, 0.4],
        Label::Ad => [3.0, 3.0, 1.0, 0.8, 0.4],
    }
}

/// µV² scale applied to the class profile.
const SYNTH_POWER_SCALE: f64 = 100.0;
const SYNTH_WHITE_VARIANCE: f64 = 0.2;

fn band_limited_channel(
    rng: &mut ChaCha8Rng,
    planner: &mut FftPlanner<f64>,
    n: usize,
    fs: f64,
    band_var: &[f64; 5],
    white_var: f64,
) -> Vec<f64> {
    let mut spectrum = vec![Complex64::new(0.0, 0.0); n];
    let df = fs / n as f64;
    for (band, &var) in Band::ALL.iter().zip(band_var) {
        let (lo, hi) = band.range_hz();
        let bins: Vec<usize> = (1..n.div_ceil(2))
            .filter(|&k| {
                let f = k as f64 * df;
                f >= lo && f < hi
            })
            .collect();
        if bins.is_empty() {
            continue;
        }
        // E[var] = sum over Hermitian pairs of 2|X_k|^2 / n^2.
        let amp = n as f64 * (var / (4.0 * bins.len() as f64)).sqrt();
        for k in bins {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            spectrum[k] = Complex64::new(re * amp, im * amp);
            spectrum[n - k] = spectrum[k].conj();
        }
    }
    planner.plan_fft_inverse(n).process(&mut spectrum);
    let white_sd = white_var.sqrt();
    spectrum
        .iter()
        .map(|z| {
            let w: f64 = rng.sample(StandardNormal);
            // Stored precision matches the f32 file format.
            (z.re / n as f64 + white_sd * w) as f32 as f64
        })
        .collect()
}

/// Deterministic synthetic 3-class dataset: per channel, a sum of
/// band-limited Gaussian noise components with class-conditional band
/// powers plus white noise, with per-subject gain and band jitter.
pub fn synthesize_dataset(spec: &SynthSpec) -> Result<(Vec<EegRecording>, DatasetManifest)> {
    if spec.subjects_per_class < 1 {
        return Err(Error::invalid("need at least one subject per class"));
    }
    if !(spec.duration_s >= 10.0 && spec.duration_s.is_finite()) {
        return Err(Error::invalid(format!("duration must be >= 10 s, got {}", spec.duration_s)));
    }
    if !(spec.sample_rate_hz > 2.0 * Band::Gamma.range_hz().1) {
        return Err(Error::invalid(format!(
            "sample rate {} Hz cannot represent the Gamma band",
            spec.sample_rate_hz
        )));
    }
    if spec.channel_names.is_empty() {
        return Err(Error::invalid("need at least one channel"));
    }
    let n = (spec.duration_s * spec.sample_rate_hz).round() as usize;
    let n_ch = spec.channel_names.len();
    let mut planner = FftPlanner::new();
    let mut recs = Vec::new();
    let mut entries = Vec::new();
    let mut subject_index = 0u64;
    for label in Label::ALL {
        for _ in 0..spec.subjects_per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(subject_index);
            subject_index += 1;
            let subject_id = format!("sub-{subject_index:03}");
            let gain = (0.25 * rng.sample::<f64, _>(StandardNormal)).exp();
            let profile = class_band_profile(label);
            let mut subject_bands = [0.0; 5];
            for (dst, p) in subject_bands.iter_mut().zip(profile) {
                *dst = p * (0.1 * rng.sample::<f64, _>(StandardNormal)).exp();
            }
            let mut data = Array2::zeros((n_ch, n));
            for c in 0..n_ch {
                let ch_gain = gain * (0.15 * rng.sample::<f64, _>(StandardNormal)).exp();
                let band_var = subject_bands.map(|v| v * ch_gain * SYNTH_POWER_SCALE);
                let white = SYNTH_WHITE_VARIANCE * ch_gain * SYNTH_POWER_SCALE;
                let x = band_limited_channel(
                    &mut rng,
                    &mut planner,
                    n,
                    spec.sample_rate_hz,
                    &band_var,
                    white,
                );
                data.row_mut(c).iter_mut().zip(x).for_each(|(d, v)| *d = v);
            }
            let rec = EegRecording::new(
                subject_id.clone(),
                label,
                spec.sample_rate_hz,
                spec.channel_names.clone(),
                data,
            )?;
            entries.push(ManifestEntry {
                path: format!("{subject_id}.eegs"),
                subject_id,
                label,
                sample_rate_hz: spec.sample_rate_hz,
                channel_names: spec.channel_names.clone(),
            });
            recs.push(rec);
        }
    }
    Ok((recs, DatasetManifest::new(entries)?))
}

/// Subject-level train/validation/test partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectSplit {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl SubjectSplit {
    /// Which partition a subject belongs to, if any.
    pub fn part_of(&self, subject_id: &str) -> Option<SplitPart> {
        let has = |v: &[String]| v.iter().any(|s| s == subject_id);
        if has(&self.train_ids) {
            Some(SplitPart::Train)
        } else if has(&self.val_ids) {
            Some(SplitPart::Val)
        } else if has(&self.test_ids) {
            Some(SplitPart::Test)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

impl FromStr for SplitPart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitPart::Train),
            "val" => Ok(SplitPart::Val),
            "test" => Ok(SplitPart::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

/// Largest-remainder allocation of `n` items over `ratios`.
pub(crate) fn apportion(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact = ratios.map(|r| r * n as f64);
    let mut counts = exact.map(|e| e.floor() as usize);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Stratified subject-level split. Totals follow a largest-remainder
/// apportionment of the whole dataset; each class is spread across the
/// parts in proportion where the counts allow.
pub fn split_dataset(manifest: &DatasetManifest, ratios: (f64, f64, f64), seed: u64) -> Result<SubjectSplit> {
    let ratios = [ratios.0, ratios.1, ratios.2];
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0))
        || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::invalid(format!("ratios must sum to 1, got {ratios:?}")));
    }
    let n = manifest.entries.len();
    if n < 5 {
        return Err(Error::invalid(format!("need at least 5 subjects to split, got {n}")));
    }
    let totals = apportion(n, ratios);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut by_class: BTreeMap<Label, Vec<String>> = BTreeMap::new();
    for e in &manifest.entries {
        by_class.entry(e.label).or_default().push(e.subject_id.clone());
    }
    for ids in by_class.values_mut() {
        ids.sort();
        ids.shuffle(&mut rng);
    }

    // Floor quota per (class, part), then hand out the leftovers by
    // descending fractional part while respecting the global totals.
    let mut assigned = [0usize; 3];
    let mut quota: BTreeMap<Label, [usize; 3]> = BTreeMap::new();
    let mut fractions = Vec::new();
    for (&label, ids) in &by_class {
        let exact = ratios.map(|r| r * ids.len() as f64);
        let q = exact.map(|e| e.floor() as usize);
        for p in 0..3 {
            assigned[p] += q[p];
            fractions.push((exact[p] - exact[p].floor(), label, p));
        }
        quota.insert(label, q);
    }
    fractions.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut leftover: BTreeMap<Label, usize> =
        by_class.iter().map(|(l, ids)| (*l, ids.len() - quota[l].iter().sum::<usize>())).collect();
    for &(_, label, p) in &fractions {
        if leftover[&label] > 0 && assigned[p] < totals[p] {
            quota.get_mut(&label).unwrap()[p] += 1;
            *leftover.get_mut(&label).unwrap() -= 1;
            assigned[p] += 1;
        }
    }
    for (label, left) in leftover.iter_mut() {
        while *left > 0 {
            let p = (0..3).find(|&p| assigned[p] < totals[p]).expect("totals cover every subject");
            quota.get_mut(label).unwrap()[p] += 1;
            assigned[p] += 1;
            *left -= 1;
        }
    }

    let mut parts: [Vec<String>; 3] = Default::default();
    for (label, ids) in &by_class {
        let q = quota[label];
        let mut it = ids.iter().cloned();
        for p in 0..3 {
            parts[p].extend(it.by_ref().take(q[p]));
        }
    }
    for part in parts.iter_mut() {
        part.sort();
    }
    let [train_ids, val_ids, test_ids] = parts;
    Ok(SubjectSplit { train_ids, val_ids, test_ids })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest_with(n_per_class: usize) -> DatasetManifest {
        let mut entries = Vec::new();
        let mut i = 0;
        for label in Label::ALL {
            for _ in 0..n_per_class {
                i += 1;
                entries.push(ManifestEntry {
                    path: format!("s{i}.eegs"),
                    subject_id: format!("s{i:03}"),
                    label,
                    sample_rate_hz: 500.0,
                    channel_names: vec!["Cz".into()],
                });
            }
        }
        DatasetManifest::new(entries).unwrap()
    }

    fn small_rec(data: Array2<f64>) -> EegRecording {
        let names = (0..data.nrows()).map(|i| format!("ch{i}")).collect();
        EegRecording::new("s1", Label::Hc, 500.0, names, data).unwrap()
    }

    #[test]
    fn binary_read_back_by_index() {
        let dir = tempfile::tempdir().unwrap();
        let data = Array2::from_shape_vec((2, 4), vec![1., 2., 3., 4., 5., 6., 7., 8.]).unwrap();
        let rec = small_rec(data);
        let path = dir.path().join("s1.eegs");
        write_binary(&rec, &path).unwrap();
        let entry = ManifestEntry {
            path: "s1.eegs".into(),
            subject_id: "s1".into(),
            label: Label::Hc,
            sample_rate_hz: 500.0,
            channel_names: rec.channel_names.clone(),
        };
        let back = load_recording(&path, &entry).unwrap();
        assert_eq!(back.data[[1, 2]], 7.0);
        assert_eq!(back, rec);
    }

    #[test]
    fn binary_shape_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.eegs");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(BINARY_MAGIC);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&4u64.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 12]);
        fs::write(&path, bytes).unwrap();
        let entry = ManifestEntry {
            path: "bad.eegs".into(),
            subject_id: "s".into(),
            label: Label::Ad,
            sample_rate_hz: 500.0,
            channel_names: vec!["a".into(), "b".into()],
        };
        assert!(matches!(load_recording(&path, &entry), Err(Error::Shape(_))));
    }

    #[test]
    fn csv_nan_and_header_checks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        fs::write(&path, "Fz,Cz\n1.0,2.0\nNaN,3.0\n").unwrap();
        let mut entry = ManifestEntry {
            path: "r.csv".into(),
            subject_id: "s".into(),
            label: Label::Ftd,
            sample_rate_hz: 500.0,
            channel_names: vec!["Fz".into(), "Cz".into()],
        };
        let err = load_recording(&path, &entry).unwrap_err();
        assert!(err.to_string().contains("non-finite sample"), "{err}");

        fs::write(&path, "Fz,Cz\n1.0,2.0\n4.0,3.0\n").unwrap();
        let rec = load_recording(&path, &entry).unwrap();
        assert_eq!(rec.data, Array2::from_shape_vec((2, 2), vec![1., 4., 2., 3.]).unwrap());

        entry.channel_names = vec!["Cz".into(), "Fz".into()];
        assert!(load_recording(&path, &entry).is_err());
        assert!(load_recording(dir.path().join("missing.csv"), &entry).is_err());
    }

    #[test]
    fn csv_nineteen_channels_sixty_seconds() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let mut text = MONTAGE_10_20.join(",");
        text.push('\n');
        let row = vec!["0.5"; 19].join(",");
        for _ in 0..30_000 {
            text.push_str(&row);
            text.push('\n');
        }
        fs::write(&path, text).unwrap();
        let entry = ManifestEntry {
            path: "r.csv".into(),
            subject_id: "s".into(),
            label: Label::Hc,
            sample_rate_hz: 500.0,
            channel_names: MONTAGE_10_20.iter().map(|s| s.to_string()).collect(),
        };
        let rec = load_recording(&path, &entry).unwrap();
        assert_eq!(rec.data.dim(), (19, 30_000));
    }

    #[test]
    fn resample_counts_and_errors() {
        let rec = small_rec(Array2::zeros((2, 30_000)));
        assert_eq!(resample(&rec, 250.0).unwrap().n_samples(), 15_000);
        assert_eq!(resample(&rec, 125.0).unwrap().n_samples(), 7_500);
        let err = resample(&rec, 300.0).unwrap_err();
        assert!(err.to_string().contains("non-integer decimation"));
        assert!(resample(&rec, 500.0).is_err());
        assert!(resample(&rec, 1000.0).is_err());
    }

    #[test]
    fn resample_passes_dc() {
        let rec = small_rec(Array2::from_elem((1, 2_000), 3.0));
        let out = resample(&rec, 125.0).unwrap();
        assert!(out.data.iter().all(|v| (v - 3.0).abs() < 1e-9));
    }

    #[test]
    fn channel_selection() {
        let data = Array2::from_shape_fn((19, 10), |(c, t)| (c * 100 + t) as f64);
        let rec = EegRecording::new(
            "s",
            Label::Hc,
            500.0,
            MONTAGE_10_20.iter().map(|s| s.to_string()).collect(),
            data,
        )
        .unwrap();
        let sub = select_channels(&rec, &["Fz", "Cz", "Pz"]).unwrap();
        assert_eq!(sub.data.dim(), (3, 10));
        assert_eq!(sub.data.row(0), rec.data.row(4));
        assert_eq!(sub.data.row(1), rec.data.row(9));
        assert_eq!(sub.data.row(2), rec.data.row(14));
        assert_eq!(select_channels(&rec, &MONTAGE_10_20).unwrap(), rec);
        let err = select_channels(&rec, &["XX"]).unwrap_err();
        assert!(err.to_string().contains("unknown channel"));
    }

    #[test]
    fn synth_is_deterministic_and_counted() {
        let spec = SynthSpec { channel_names: vec!["Cz".into(), "Pz".into()], ..SynthSpec::new(10, 10.0, 125.0, 42) };
        let (a, ma) = synthesize_dataset(&spec).unwrap();
        let (b, mb) = synthesize_dataset(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        assert_eq!(ma.entries.len(), 30);
        let ids: HashSet<_> = ma.subject_ids().into_iter().collect();
        assert_eq!(ids.len(), 30);
        assert!(synthesize_dataset(&SynthSpec::new(0, 10.0, 500.0, 1)).is_err());
        assert!(synthesize_dataset(&SynthSpec::new(1, 5.0, 500.0, 1)).is_err());
    }

    #[test]
    fn split_counts_and_errors() {
        let m = manifest_with(10);
        let s = split_dataset(&m, (0.6, 0.2, 0.2), 7).unwrap();
        assert_eq!((s.train_ids.len(), s.val_ids.len(), s.test_ids.len()), (18, 6, 6));
        assert_eq!(s, split_dataset(&m, (0.6, 0.2, 0.2), 7).unwrap());
        for label in Label::ALL {
            let count = |ids: &[String]| {
                ids.iter()
                    .filter(|id| m.entries.iter().any(|e| &e.subject_id == *id && e.label == label))
                    .count()
            };
            assert_eq!((count(&s.train_ids), count(&s.val_ids), count(&s.test_ids)), (6, 2, 2));
        }
        let err = split_dataset(&m, (0.5, 0.2, 0.2), 7).unwrap_err();
        assert!(err.to_string().contains("ratios must sum to 1"));
        let tiny = DatasetManifest::new(m.entries[..4].to_vec()).unwrap();
        assert!(split_dataset(&tiny, (0.6, 0.2, 0.2), 7).is_err());
    }

    #[test]
    fn manifest_rejects_duplicates_and_mixed_channels() {
        let mut m = manifest_with(2);
        m.entries[1].subject_id = m.entries[0].subject_id.clone();
        assert!(m.validate().is_err());
        let mut m = manifest_with(2);
        m.entries[1].channel_names = vec!["Pz".into()];
        assert!(m.validate().is_err());
    }
}
