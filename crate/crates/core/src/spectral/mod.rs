//! Frequency-band decomposition and Welch band-power features.

mod butterworth;
mod welch;

pub use butterworth::{butter_bandpass, Biquad, Sos};
pub use welch::{welch_psd, Psd, WelchConfig, Window};

use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Prototype order of the band-pass filters (4 biquads per pass).
pub const BUTTER_ORDER: usize = 4;
/// Floor added before taking log band power.
pub const LOG_EPS: f64 = 1e-12;
pub const N_BANDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Band {
    Delta,
    Theta,
    Alpha,
    Beta,
    Gamma,
}

impl Band {
    pub const ALL: [Band; N_BANDS] = [Band::Delta, Band::Theta, Band::Alpha, Band::Beta, Band::Gamma];

    /// `[lo, hi)` in Hz.
    pub fn range_hz(self) -> (f64, f64) {
        match self {
            Band::Delta => (0.5, 4.0),
            Band::Theta => (4.0, 8.0),
            Band::Alpha => (8.0, 12.0),
            Band::Beta => (12.0, 20.0),
            Band::Gamma => (20.0, 40.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Band::Delta => "delta",
            Band::Theta => "theta",
            Band::Alpha => "alpha",
            Band::Beta => "beta",
            Band::Gamma => "gamma",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Log band power, `N_c × 5`, columns Delta → Gamma.
#[derive(Debug, Clone, PartialEq)]
pub struct BandFeatures {
    pub values: Array2<f64>,
}

impl BandFeatures {
    pub fn n_channels(&self) -> usize {
        self.values.nrows()
    }

    /// Copy with every band column except `band` set to zero.
    pub fn isolate(&self, band: usize) -> BandFeatures {
        let mut values = Array2::zeros(self.values.raw_dim());
        values.column_mut(band).assign(&self.values.column(band));
        BandFeatures { values }
    }
}

/// Zero-phase Butterworth band-pass of every row of `signal`.
pub fn bandpass_filter(signal: ArrayView2<'_, f64>, band: Band, fs: f64) -> Result<Array2<f64>> {
    let (lo, hi) = band.range_hz();
    if !(fs > 2.0 * hi) {
        return Err(Error::invalid(format!(
            "{:?} band above Nyquist: needs fs > {} Hz, got {fs}",
            band,
            2.0 * hi
        )));
    }
    let sos = butter_bandpass(BUTTER_ORDER, lo, hi, fs);
    let mut out = Array2::zeros(signal.raw_dim());
    for (c, row) in signal.rows().into_iter().enumerate() {
        let y = sos.filtfilt(&row.to_vec());
        out.row_mut(c).iter_mut().zip(y).for_each(|(d, v)| *d = v);
    }
    Ok(out)
}

/// Band stack `5 × N_c × N_seq` in Delta → Gamma order.
pub fn decompose_bands(segment: ArrayView2<'_, f64>, fs: f64) -> Result<Array3<f64>> {
    let (n_ch, len) = segment.dim();
    let mut stack = Array3::zeros((N_BANDS, n_ch, len));
    for band in Band::ALL {
        let filtered = bandpass_filter(segment, band, fs)?;
        stack.index_axis_mut(Axis(0), band.index()).assign(&filtered);
    }
    Ok(stack)
}

/// `values[c][b] = ln(ε + mean PSD over lo ≤ f < hi)`.
pub fn band_powers(psd: &Psd) -> Result<BandFeatures> {
    let max_f = psd.freqs_hz.last().copied().unwrap_or(0.0);
    if max_f < Band::Gamma.range_hz().1 {
        return Err(Error::invalid(format!(
            "PSD reaches only {max_f} Hz; band features need 40 Hz"
        )));
    }
    let mut values = Array2::zeros((psd.power.nrows(), N_BANDS));
    for band in Band::ALL {
        let (lo, hi) = band.range_hz();
        let bins: Vec<usize> = psd
            .freqs_hz
            .iter()
            .enumerate()
            .filter(|(_, &f)| f >= lo && f < hi)
            .map(|(k, _)| k)
            .collect();
        if bins.len() < 2 {
            return Err(Error::invalid(format!(
                "insufficient resolution: {} bin(s) in {:?} band at df = {} Hz",
                bins.len(),
                band,
                psd.df()
            )));
        }
        for c in 0..psd.power.nrows() {
            let mean = bins.iter().map(|&k| psd.power[[c, k]]).sum::<f64>() / bins.len() as f64;
            values[[c, band.index()]] = (LOG_EPS + mean).ln();
        }
    }
    Ok(BandFeatures { values })
}

/// Welch PSD with the default configuration followed by [`band_powers`].
pub fn segment_features(segment: ArrayView2<'_, f64>, fs: f64) -> Result<BandFeatures> {
    let psd = welch_psd(segment, fs, &WelchConfig::for_length(segment.ncols()))?;
    band_powers(&psd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(freq: f64, fs: f64, n: usize) -> Array2<f64> {
        Array2::from_shape_fn((1, n), |(_, t)| (2.0 * PI * freq * t as f64 / fs).sin())
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn alpha_passes_ten_hertz() {
        let x = sine(10.0, 500.0, 2000);
        let y = bandpass_filter(x.view(), Band::Alpha, 500.0).unwrap();
        let ratio = rms(y.as_slice().unwrap()) / std::f64::consts::FRAC_1_SQRT_2;
        assert!((ratio - 1.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn delta_rejects_ten_hertz() {
        let x = sine(10.0, 500.0, 2000);
        let y = bandpass_filter(x.view(), Band::Delta, 500.0).unwrap();
        assert!(rms(y.as_slice().unwrap()) < 0.05);
    }

    #[test]
    fn zero_in_zero_out() {
        let x = Array2::zeros((3, 500));
        for band in Band::ALL {
            assert!(bandpass_filter(x.view(), band, 500.0).unwrap().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn gamma_needs_nyquist_above_forty() {
        let x = Array2::zeros((1, 600));
        let err = decompose_bands(x.view(), 60.0).unwrap_err();
        assert!(err.to_string().contains("Gamma band above Nyquist"), "{err}");
    }

    #[test]
    fn uniform_psd_gives_uniform_features() {
        let freqs: Vec<f64> = (0..=100).map(|k| k as f64 * 0.5).collect();
        let power = Array2::from_elem((2, freqs.len()), 3.5);
        let f = band_powers(&Psd { freqs_hz: freqs, power }).unwrap();
        assert!(f.values.iter().all(|&v| v == (LOG_EPS + 3.5).ln()));
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let freqs: Vec<f64> = (0..=50).map(|k| k as f64 * 2.0).collect();
        let power = Array2::from_elem((1, freqs.len()), 1.0);
        let err = band_powers(&Psd { freqs_hz: freqs, power }).unwrap_err();
        assert!(err.to_string().contains("insufficient resolution"));
    }

    #[test]
    fn isolate_keeps_one_column() {
        let f = BandFeatures { values: Array2::from_shape_fn((2, 5), |(c, b)| (c * 5 + b + 1) as f64) };
        let iso = f.isolate(2);
        assert_eq!(iso.values.column(2), f.values.column(2));
        assert_eq!(iso.values.sum(), f.values.column(2).sum());
    }
}
