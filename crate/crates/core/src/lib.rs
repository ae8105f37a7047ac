//! EEG classification with diagonal state-space sequence encoders.
//!
//! The crate covers the whole pipeline:
//!
//! ```text
//! recordings (.eegs / .csv)
//!   ├─ eeg_io::load_recording / resample / select_channels
//!   ├─ segmentation::segment            N_seg × N_c × N_seq patches
//!   ├─ spectral::welch_psd + band_powers  N_c × 5 log band power
//!   ├─ model::forward_{temporal,spectral,combined}
//!   │     conv embed → [norm → SSM → gate → residual] × n_blocks → mean pool → linear
//!   ├─ optw::ensemble_*                 per-band bottleneck matrices W^r
//!   ├─ training::train                  analytic backward + Adam
//!   └─ eval::evaluate / bench_sweep     confusion matrices, accuracy tables
//! ```
//!
//! All numerics are `f64`. Every random draw goes through a seeded ChaCha
//! generator so identical seeds give bitwise-identical results.

pub mod error;
pub mod eeg_io;
pub mod eval;
pub mod model;
pub mod optw;
pub mod pipeline;
pub mod segmentation;
pub mod spectral;
pub mod ssm;
pub mod training;

pub use error::{Error, Result};
pub use eeg_io::{DatasetManifest, EegRecording, Label, SubjectSplit};
pub use model::{ModelConfig, ModelWeights, Variant};
pub use training::{TrainConfig, TrainHistory};
