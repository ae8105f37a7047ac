//! Digital Butterworth band-pass design (bilinear transform) and
//! zero-phase second-order-section filtering.

use num_complex::Complex64;
use std::f64::consts::PI;

/// One biquad, `b = [b0, b1, b2]`, `a = [1, a1, a2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z: Complex64) -> Complex64 {
        let zi = z.inv();
        let num = self.b[0] + self.b[1] * zi + self.b[2] * zi * zi;
        let den = self.a[0] + self.a[1] * zi + self.a[2] * zi * zi;
        num / den
    }

    /// Transposed direct form II state for a constant input `x0` held
    /// forever.
    fn steady_state(&self, x0: f64) -> ([f64; 2], f64) {
        let dc = (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[1] + self.a[2]);
        let y = dc * x0;
        let z2 = self.b[2] * x0 - self.a[2] * y;
        let z1 = y - self.b[0] * x0;
        ([z1, z2], y)
    }

    fn run(&self, x: &mut [f64], mut state: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        for v in x.iter_mut() {
            let inp = *v;
            let out = b0 * inp + state[0];
            state[0] = b1 * inp - a1 * out + state[1];
            state[1] = b2 * inp - a2 * out;
            *v = out;
        }
    }
}

/// Cascade of biquads.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

impl Sos {
    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64, fs: f64) -> Complex64 {
        let z = Complex64::from_polar(1.0, 2.0 * PI * freq_hz / fs);
        self.sections.iter().map(|s| s.response(z)).product()
    }

    /// Causal filtering with steady-state initial conditions for `x[0]`.
    fn filter_in_place(&self, x: &mut [f64]) {
        let Some(&first) = x.first() else { return };
        let mut level = first;
        for sec in &self.sections {
            let (state, out_level) = sec.steady_state(level);
            sec.run(x, state);
            level = out_level;
        }
    }

    /// Forward-backward (zero-phase) filtering with odd-extension padding.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = (3 * (2 * self.sections.len() + 1)).min(n - 1);
        let mut ext = crate::eeg_io::odd_extend(x, pad);
        self.filter_in_place(&mut ext);
        ext.reverse();
        self.filter_in_place(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Order-`order` Butterworth band-pass between `lo_hz` and `hi_hz`,
/// normalised to unit gain at the (prewarped) geometric centre.
/// Produces `order` biquads.
pub fn butter_bandpass(order: usize, lo_hz: f64, hi_hz: f64, fs: f64) -> Sos {
    assert!(order >= 1 && order % 2 == 0, "even prototype order expected");
    assert!(0.0 < lo_hz && lo_hz < hi_hz && hi_hz < fs / 2.0);
    let k = 2.0 * fs;
    let w1 = k * (PI * lo_hz / fs).tan();
    let w2 = k * (PI * hi_hz / fs).tan();
    let w0 = (w1 * w2).sqrt();
    let bw = w2 - w1;

    let mut sections = Vec::with_capacity(order);
    for i in 0..order {
        let p = Complex64::from_polar(1.0, PI * (2 * i + order + 1) as f64 / (2 * order) as f64);
        let pb = p * bw;
        let disc = (pb * pb - 4.0 * w0 * w0).sqrt();
        for s in [(pb + disc) / 2.0, (pb - disc) / 2.0] {
            if s.im <= 0.0 {
                continue;
            }
            let z = (k + s) / (k - s);
            sections.push(Biquad { b: [1.0, 0.0, -1.0], a: [1.0, -2.0 * z.re, z.norm_sqr()] });
        }
    }
    debug_assert_eq!(sections.len(), order);

    let centre = 2.0 * (w0 / k).atan();
    let z0 = Complex64::from_polar(1.0, centre);
    let gain: f64 = sections.iter().map(|s| s.response(z0)).product::<Complex64>().norm();
    let per_section = gain.powf(-1.0 / sections.len() as f64);
    for s in &mut sections {
        s.b.iter_mut().for_each(|v| *v *= per_section);
    }
    Sos { sections }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_gain_at_centre_and_stable() {
        let sos = butter_bandpass(4, 8.0, 12.0, 500.0);
        assert_eq!(sos.sections.len(), 4);
        let centre = 500.0 / PI
            * ((PI * 8.0 / 500.0).tan() * (PI * 12.0 / 500.0).tan()).sqrt().atan();
        assert!((sos.response(centre, 500.0).norm() - 1.0).abs() < 1e-9);
        for s in &sos.sections {
            assert!(s.a[2] < 1.0, "pole radius {}", s.a[2].sqrt());
        }
    }

    #[test]
    fn half_power_at_band_edges() {
        let sos = butter_bandpass(4, 4.0, 8.0, 500.0);
        for f in [4.0, 8.0] {
            let mag = sos.response(f, 500.0).norm();
            assert!((mag - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6, "{f} Hz -> {mag}");
        }
        assert!(sos.response(0.0, 500.0).norm() < 1e-12);
        assert!(sos.response(249.9, 500.0).norm() < 1e-6);
    }

    #[test]
    fn filtfilt_of_zero_is_zero() {
        let sos = butter_bandpass(4, 0.5, 4.0, 500.0);
        assert!(sos.filtfilt(&vec![0.0; 300]).iter().all(|&v| v == 0.0));
        assert!(sos.filtfilt(&[]).is_empty());
    }
}
