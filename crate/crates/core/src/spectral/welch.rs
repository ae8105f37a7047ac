//! Welch power spectral density (one-sided, density scaling).

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    /// Periodic Hann.
    Hann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => {
                (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
            }
            Window::Rectangular => vec![1.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchConfig {
    pub nperseg: usize,
    /// Overlapping samples between consecutive windows.
    pub noverlap: usize,
    pub window: Window,
}

impl WelchConfig {
    /// Hann, `nperseg = min(len, 512)`, 50 % overlap.
    pub fn for_length(len: usize) -> Self {
        let nperseg = len.min(512);
        Self { nperseg, noverlap: nperseg / 2, window: Window::Hann }
    }
}

/// Power spectral density per channel, µV²/Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct Psd {
    pub freqs_hz: Vec<f64>,
    /// `N_c × N_freqs`.
    pub power: Array2<f64>,
}

impl Psd {
    pub fn df(&self) -> f64 {
        self.freqs_hz.get(1).map_or(0.0, |f1| f1 - self.freqs_hz[0])
    }
}

/// Average of windowed periodograms over overlapping windows.
///
/// Scaling is `|X_k|^2 / (fs · Σw²)`, doubled for every bin except DC and
/// (for even `nperseg`) Nyquist, so `Σ power · df` equals the mean square
/// of the signal.
pub fn welch_psd(signal: ArrayView2<'_, f64>, fs: f64, cfg: &WelchConfig) -> Result<Psd> {
    let (n_ch, len) = signal.dim();
    let nperseg = cfg.nperseg;
    if nperseg == 0 {
        return Err(Error::invalid("nperseg must be positive"));
    }
    if cfg.noverlap >= nperseg {
        return Err(Error::invalid("noverlap must be smaller than nperseg"));
    }
    if len < nperseg {
        return Err(Error::invalid(format!(
            "segment of {len} samples is shorter than nperseg {nperseg}"
        )));
    }
    let step = nperseg - cfg.noverlap;
    let n_windows = (len - nperseg) / step + 1;
    let window = cfg.window.coefficients(nperseg);
    let win_energy: f64 = window.iter().map(|w| w * w).sum();
    let n_freqs = nperseg / 2 + 1;
    let scale = 1.0 / (fs * win_energy * n_windows as f64);

    let fft = FftPlanner::new().plan_fft_forward(nperseg);
    let mut buf = vec![Complex64::new(0.0, 0.0); nperseg];
    let mut power = Array2::zeros((n_ch, n_freqs));
    for c in 0..n_ch {
        let row = signal.row(c);
        let mut acc = vec![0.0; n_freqs];
        for w in 0..n_windows {
            let start = w * step;
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = Complex64::new(row[start + i] * window[i], 0.0);
            }
            fft.process(&mut buf);
            for (a, z) in acc.iter_mut().zip(&buf) {
                *a += z.norm_sqr();
            }
        }
        for (k, a) in acc.iter().enumerate() {
            let one_sided = if k == 0 || (nperseg % 2 == 0 && k == nperseg / 2) { 1.0 } else { 2.0 };
            power[[c, k]] = a * scale * one_sided;
        }
    }
    let freqs_hz = (0..n_freqs).map(|k| k as f64 * fs / nperseg as f64).collect();
    Ok(Psd { freqs_hz, power })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn constant_signal_hann_and_rectangular() {
        let x = Array2::from_elem((1, 1024), 2.0);
        let rect = WelchConfig { nperseg: 256, noverlap: 128, window: Window::Rectangular };
        let psd = welch_psd(x.view(), 250.0, &rect).unwrap();
        assert!(psd.power[[0, 0]] > 0.0);
        assert!(psd.power.row(0).iter().skip(1).all(|&p| p.abs() < 1e-20));

        let psd = welch_psd(x.view(), 250.0, &WelchConfig::for_length(1024)).unwrap();
        let row = psd.power.row(0);
        // Hann main lobe: DC plus the first bin, nothing beyond.
        assert!(row[0] > row[1]);
        assert!(row.iter().skip(2).all(|&p| p.abs() < 1e-20));
    }

    #[test]
    fn rejects_short_input() {
        let x = Array2::zeros((1, 100));
        assert!(welch_psd(x.view(), 500.0, &WelchConfig { nperseg: 128, noverlap: 64, window: Window::Hann }).is_err());
    }

    #[test]
    fn frequency_grid() {
        let x = Array2::zeros((2, 1000));
        let psd = welch_psd(x.view(), 500.0, &WelchConfig::for_length(1000)).unwrap();
        assert_eq!(psd.freqs_hz.len(), 257);
        assert_eq!(*psd.freqs_hz.last().unwrap(), 250.0);
        assert!((psd.df() - 500.0 / 512.0).abs() < 1e-15);
        assert_eq!(psd.power.dim(), (2, 257));
    }
}
