//! Diagonal linear time-invariant state-space primitive.
//!
//! Continuous parameters `A = diag(-exp(a_log))`, `B`, `C`, `D`,
//! `Δ = exp(dt_log)` are discretised with a zero-order hold:
//!
//! ```text
//! Ā = exp(ΔA)        B̄ = (ΔA)⁻¹(exp(ΔA) − I)ΔB = (exp(Δa) − 1)/a · B
//! h[t] = Ā h[t−1] + B̄ x[t]        y[t] = C·h[t] + D x[t]
//! ```
//!
//! The same map is a causal convolution with `K = (CB̄, CĀB̄, …, CĀ^{M−1}B̄)`
//! plus the `D` skip; [`scan`] and [`conv_apply`] agree to rounding.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Below this `|Δa|` the ZOH input gain uses its limit `Δ·B`.
pub const ZOH_LIMIT: f64 = 1e-8;
/// Lengths at or above this use the FFT route in [`ConvMethod::Auto`].
pub const FFT_THRESHOLD: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct SsmParams {
    pub a_log: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: f64,
    pub dt_log: f64,
}

impl SsmParams {
    pub fn state_size(&self) -> usize {
        self.a_log.len()
    }

    /// Diagonal of the continuous state matrix.
    pub fn a(&self) -> Vec<f64> {
        self.a_log.iter().map(|v| -v.exp()).collect()
    }

    pub fn dt(&self) -> f64 {
        self.dt_log.exp()
    }

    fn check(&self) -> Result<()> {
        let n = self.a_log.len();
        if self.b.len() != n || self.c.len() != n {
            return Err(Error::shape(format!(
                "state size {n} but B has {} and C has {} entries",
                self.b.len(),
                self.c.len()
            )));
        }
        let finite = self.a_log.iter().chain(&self.b).chain(&self.c).all(|v| v.is_finite())
            && self.d.is_finite()
            && self.dt_log.is_finite();
        if !finite {
            return Err(Error::data("non-finite SSM parameter"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSsm {
    pub a_bar: Vec<f64>,
    pub b_bar: Vec<f64>,
}

impl DiscreteSsm {
    pub fn state_size(&self) -> usize {
        self.a_bar.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub k: Vec<f64>,
}

/// `A = diag(−1, …, −N)`, `B`, `C ~ U(−1/√N, 1/√N)`, `D = 1`, `Δ = 0.01`.
pub fn init_ssm(n: usize, seed: u64) -> Result<SsmParams> {
    if n < 1 {
        return Err(Error::invalid("state size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / (n as f64).sqrt();
    let b = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    let c = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Ok(SsmParams {
        a_log: (0..n).map(|i| ((i + 1) as f64).ln()).collect(),
        b,
        c,
        d: 1.0,
        dt_log: 0.01f64.ln(),
    })
}

/// ZOH for one diagonal entry: returns `(ā, ā-input gain factor)` so that
/// `b̄ = factor · B`.
pub fn zoh_factor(a: f64, dt: f64) -> (f64, f64) {
    let x = dt * a;
    let a_bar = x.exp();
    let factor = if x.abs() < ZOH_LIMIT { dt } else { x.exp_m1() / a };
    (a_bar, factor)
}

/// Scalar ZOH with an explicit input gain.
pub fn zoh_scalar(a: f64, dt: f64, b: f64) -> (f64, f64) {
    let (a_bar, factor) = zoh_factor(a, dt);
    (a_bar, factor * b)
}

pub fn discretize_zoh(params: &SsmParams) -> Result<DiscreteSsm> {
    params.check()?;
    let dt = params.dt();
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::data(format!("step size must be positive and finite, got {dt}")));
    }
    let (a_bar, b_bar) = params
        .a()
        .into_iter()
        .zip(&params.b)
        .map(|(a, &b)| zoh_scalar(a, dt, b))
        .unzip();
    Ok(DiscreteSsm { a_bar, b_bar })
}

fn check_output_map(disc: &DiscreteSsm, c: &[f64]) -> Result<()> {
    if disc.b_bar.len() != disc.a_bar.len() || c.len() != disc.a_bar.len() {
        return Err(Error::shape(format!(
            "Ā has {} entries, B̄ {}, C {}",
            disc.a_bar.len(),
            disc.b_bar.len(),
            c.len()
        )));
    }
    Ok(())
}

/// Recurrence from a zero initial state.
pub fn scan(disc: &DiscreteSsm, c: &[f64], d: f64, x: &[f64]) -> Result<Vec<f64>> {
    check_output_map(disc, c)?;
    let mut y: Vec<f64> = x.iter().map(|v| d * v).collect();
    scan_accumulate(disc, c, x, &mut y);
    Ok(y)
}

/// `y += C·h` for the recurrence driven by `x` (no skip term).
pub(crate) fn scan_accumulate(disc: &DiscreteSsm, c: &[f64], x: &[f64], y: &mut [f64]) {
    for n in 0..disc.a_bar.len() {
        let (a, b, cn) = (disc.a_bar[n], disc.b_bar[n], c[n]);
        let mut h = 0.0;
        for (yt, xt) in y.iter_mut().zip(x) {
            h = a * h + b * xt;
            *yt += cn * h;
        }
    }
}

/// `k[m] = Σ_n C[n] ā[n]^m b̄[n]`.
pub fn kernel(disc: &DiscreteSsm, c: &[f64], m: usize) -> Result<Kernel> {
    if m < 1 {
        return Err(Error::invalid("kernel length must be at least 1"));
    }
    check_output_map(disc, c)?;
    let mut k = vec![0.0; m];
    for n in 0..disc.a_bar.len() {
        let mut p = c[n] * disc.b_bar[n];
        for km in k.iter_mut() {
            *km += p;
            p *= disc.a_bar[n];
        }
    }
    Ok(Kernel { k })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvMethod {
    Direct,
    Fft,
    /// FFT from [`FFT_THRESHOLD`] samples upward, direct below.
    Auto,
}

/// Causal convolution `y[t] = Σ_{m≤t} k[m] x[t−m] + D x[t]`, direct form.
pub fn conv_apply(kern: &Kernel, d: f64, x: &[f64]) -> Result<Vec<f64>> {
    conv_apply_with(kern, d, x, ConvMethod::Direct)
}

pub fn conv_apply_with(kern: &Kernel, d: f64, x: &[f64], method: ConvMethod) -> Result<Vec<f64>> {
    if kern.k.len() != x.len() {
        return Err(Error::shape(format!(
            "kernel length {} but input length {}",
            kern.k.len(),
            x.len()
        )));
    }
    let use_fft = match method {
        ConvMethod::Direct => false,
        ConvMethod::Fft => true,
        ConvMethod::Auto => x.len() >= FFT_THRESHOLD,
    };
    let mut y = if use_fft { causal_conv_fft(&kern.k, x) } else { causal_conv_direct(&kern.k, x) };
    y.iter_mut().zip(x).for_each(|(yt, xt)| *yt += d * xt);
    Ok(y)
}

fn causal_conv_direct(k: &[f64], x: &[f64]) -> Vec<f64> {
    (0..x.len()).map(|t| (0..=t).map(|m| k[m] * x[t - m]).sum()).collect()
}

fn causal_conv_fft(k: &[f64], x: &[f64]) -> Vec<f64> {
    let m = x.len();
    let size = (2 * m).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let pad = |v: &[f64]| {
        let mut buf = vec![Complex64::new(0.0, 0.0); size];
        buf.iter_mut().zip(v).for_each(|(b, &s)| b.re = s);
        buf
    };
    let mut kf = pad(k);
    let mut xf = pad(x);
    fwd.process(&mut kf);
    fwd.process(&mut xf);
    kf.iter_mut().zip(&xf).for_each(|(a, b)| *a *= b);
    inv.process(&mut kf);
    kf[..m].iter().map(|z| z.re / size as f64).collect()
}

/// Gradients of a scan with respect to its discrete parameters and input.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanGrads {
    pub a_bar: Vec<f64>,
    pub b_bar: Vec<f64>,
    pub c: Vec<f64>,
    pub d: f64,
    pub x: Vec<f64>,
}

/// Adjoint of [`scan`] given `gy = ∂L/∂y`, by backpropagation through the
/// recurrence: `λ[t] = C gy[t] + ā λ[t+1]`.
pub fn scan_backward(disc: &DiscreteSsm, c: &[f64], d: f64, x: &[f64], gy: &[f64]) -> Result<ScanGrads> {
    check_output_map(disc, c)?;
    if gy.len() != x.len() {
        return Err(Error::shape("gradient and input lengths differ"));
    }
    let n_state = disc.a_bar.len();
    let len = x.len();
    let mut grads = ScanGrads {
        a_bar: vec![0.0; n_state],
        b_bar: vec![0.0; n_state],
        c: vec![0.0; n_state],
        d: x.iter().zip(gy).map(|(a, b)| a * b).sum(),
        x: gy.iter().map(|g| d * g).collect(),
    };
    let mut h = vec![0.0; len];
    for n in 0..n_state {
        let (a, b, cn) = (disc.a_bar[n], disc.b_bar[n], c[n]);
        let mut state = 0.0;
        for (ht, xt) in h.iter_mut().zip(x) {
            state = a * state + b * xt;
            *ht = state;
        }
        let (mut ga, mut gb, mut gc) = (0.0, 0.0, 0.0);
        let mut lambda = 0.0;
        for t in (0..len).rev() {
            gc += gy[t] * h[t];
            lambda = cn * gy[t] + a * lambda;
            gb += lambda * x[t];
            if t > 0 {
                ga += lambda * h[t - 1];
            }
            grads.x[t] += b * lambda;
        }
        grads.a_bar[n] = ga;
        grads.b_bar[n] = gb;
        grads.c[n] = gc;
    }
    Ok(grads)
}

/// Chain rule through the ZOH map and the log parameterisation:
/// returns `(∂L/∂a_log, ∂L/∂B, ∂L/∂dt_log)`.
pub fn zoh_backward(params: &SsmParams, g_a_bar: &[f64], g_b_bar: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let dt = params.dt();
    let n = params.state_size();
    let mut g_a_log = vec![0.0; n];
    let mut g_b = vec![0.0; n];
    let mut g_dt = 0.0;
    for i in 0..n {
        let a = -params.a_log[i].exp();
        let x = dt * a;
        let a_bar = x.exp();
        let (factor, dfactor_da, dfactor_ddt) = if x.abs() < ZOH_LIMIT {
            (dt, dt * dt / 2.0, 1.0)
        } else {
            (x.exp_m1() / a, (x * a_bar - x.exp_m1()) / (a * a), a_bar)
        };
        let b = params.b[i];
        g_b[i] = g_b_bar[i] * factor;
        let g_a = g_a_bar[i] * dt * a_bar + g_b_bar[i] * b * dfactor_da;
        g_dt += g_a_bar[i] * a * a_bar + g_b_bar[i] * b * dfactor_ddt;
        // a = −exp(a_log)
        g_a_log[i] = g_a * a;
    }
    (g_a_log, g_b, g_dt * dt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_rule_and_errors() {
        let p = init_ssm(3, 9).unwrap();
        let a = p.a();
        for (got, want) in a.iter().zip([-1.0, -2.0, -3.0]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert_eq!(p, init_ssm(3, 9).unwrap());
        assert_ne!(p, init_ssm(3, 10).unwrap());
        assert_eq!(p.d, 1.0);
        assert!((p.dt() - 0.01).abs() < 1e-17);
        assert!(init_ssm(0, 1).is_err());
    }

    #[test]
    fn zoh_limit_and_closed_form() {
        assert_eq!(zoh_scalar(0.0, 0.5, 2.0), (1.0, 1.0));
        let (a_bar, b_bar) = zoh_scalar(-1.0, 0.5, 1.0);
        assert!((a_bar - 0.606_530_659_712_633_4).abs() < 1e-15);
        assert!((b_bar - 0.393_469_340_287_366_6).abs() < 1e-15);
    }

    #[test]
    fn discretization_is_stable() {
        let p = init_ssm(16, 4).unwrap();
        let disc = discretize_zoh(&p).unwrap();
        assert!(disc.a_bar.iter().all(|a| a.abs() < 1.0));
        let mut bad = p.clone();
        bad.b[0] = f64::NAN;
        assert!(discretize_zoh(&bad).is_err());
    }

    #[test]
    fn scan_examples() {
        let disc = DiscreteSsm { a_bar: vec![0.5], b_bar: vec![1.0] };
        assert_eq!(scan(&disc, &[1.0], 0.0, &[0.0; 6]).unwrap(), vec![0.0; 6]);
        let impulse = [1.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(scan(&disc, &[1.0], 0.0, &impulse).unwrap(), vec![1.0, 0.5, 0.25, 0.125, 0.0625]);
        assert_eq!(scan(&disc, &[0.0], 1.0, &impulse).unwrap(), impulse.to_vec());
        assert!(scan(&disc, &[1.0, 2.0], 0.0, &impulse).is_err());
    }

    #[test]
    fn kernel_examples() {
        let disc = DiscreteSsm { a_bar: vec![0.5], b_bar: vec![1.0] };
        assert_eq!(kernel(&disc, &[1.0], 3).unwrap().k, vec![1.0, 0.5, 0.25]);
        assert_eq!(kernel(&disc, &[0.0], 4).unwrap().k, vec![0.0; 4]);
        let disc2 = DiscreteSsm { a_bar: vec![0.3, 0.9], b_bar: vec![2.0, -1.0] };
        assert_eq!(kernel(&disc2, &[1.5, 0.5], 1).unwrap().k, vec![1.5 * 2.0 - 0.5]);
        assert!(kernel(&disc, &[1.0], 0).is_err());
    }

    #[test]
    fn conv_examples() {
        let kern = Kernel { k: vec![0.4, 0.3, 0.2, 0.1] };
        let y = conv_apply(&kern, 2.0, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(y, vec![2.4, 0.3, 0.2, 0.1]);
        let x = [0.3, -1.0, 2.0, 0.5];
        assert_eq!(conv_apply(&Kernel { k: vec![0.0; 4] }, 1.0, &x).unwrap(), x.to_vec());
        assert!(conv_apply(&kern, 0.0, &[1.0]).is_err());
    }

    #[test]
    fn fft_route_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k: Vec<f64> = (0..1500).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..1500).map(|_| rng.random_range(-1.0..1.0)).collect();
        let kern = Kernel { k };
        let direct = conv_apply_with(&kern, 0.7, &x, ConvMethod::Direct).unwrap();
        let fft = conv_apply_with(&kern, 0.7, &x, ConvMethod::Auto).unwrap();
        let err = direct.iter().zip(&fft).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    fn scan_loss(p: &SsmParams, x: &[f64], w: &[f64]) -> f64 {
        let disc = discretize_zoh(p).unwrap();
        let y = scan(&disc, &p.c, p.d, x).unwrap();
        y.iter().zip(w).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn scan_adjoint_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut p = init_ssm(4, 2).unwrap();
        p.dt_log = 0.2f64.ln();
        let x: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let disc = discretize_zoh(&p).unwrap();
        let g = scan_backward(&disc, &p.c, p.d, &x, &w).unwrap();
        let (g_alog, g_b, g_dt) = zoh_backward(&p, &g.a_bar, &g.b_bar);
        let h = 1e-6;
        let check = |analytic: f64, perturb: &dyn Fn(&mut SsmParams, f64)| {
            let mut plus = p.clone();
            perturb(&mut plus, h);
            let mut minus = p.clone();
            perturb(&mut minus, -h);
            let numeric = (scan_loss(&plus, &x, &w) - scan_loss(&minus, &x, &w)) / (2.0 * h);
            assert!(
                (analytic - numeric).abs() <= 1e-6 * numeric.abs().max(1e-3),
                "analytic {analytic} numeric {numeric}"
            );
        };
        for i in 0..4 {
            check(g_alog[i], &|q, s| q.a_log[i] += s);
            check(g_b[i], &|q, s| q.b[i] += s);
            check(g.c[i], &|q, s| q.c[i] += s);
        }
        check(g_dt, &|q, s| q.dt_log += s);
        check(g.d, &|q, s| q.d += s);
        for t in [0, 7, 39] {
            let mut xp = x.clone();
            xp[t] += h;
            let mut xm = x.clone();
            xm[t] -= h;
            let numeric = (scan_loss(&p, &xp, &w) - scan_loss(&p, &xm, &w)) / (2.0 * h);
            assert!((g.x[t] - numeric).abs() < 1e-8);
        }
    }
}
