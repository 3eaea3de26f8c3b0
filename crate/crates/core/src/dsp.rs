//! Small signal-processing kit shared by the transmitter and receiver.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use statrs::distribution::{ContinuousCDF, Normal};

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population variance.
pub fn variance(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Gaussian tail probability Q(x) = P(N(0,1) > x).
pub fn q_function(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(x / std::f64::consts::SQRT_2)
}

/// Inverse of [`q_function`] on (0, 1).
pub fn q_inverse(p: f64) -> f64 {
    let n = Normal::standard();
    -n.inverse_cdf(p)
}

/// Root-raised-cosine impulse response with `span_symbols * sps + 1` taps,
/// scaled to unit energy.
pub fn rrc_taps(rolloff: f64, sps: usize, span_symbols: usize) -> Vec<f64> {
    let n = span_symbols * sps + 1;
    let mid = (n - 1) as f64 / 2.0;
    let b = rolloff;
    let mut h: Vec<f64> = (0..n)
        .map(|i| {
            let t = (i as f64 - mid) / sps as f64;
            if t.abs() < 1e-12 {
                1.0 - b + 4.0 * b / PI
            } else if b > 0.0 && (t.abs() - 1.0 / (4.0 * b)).abs() < 1e-9 {
                b / 2f64.sqrt()
                    * ((1.0 + 2.0 / PI) * (PI / (4.0 * b)).sin()
                        + (1.0 - 2.0 / PI) * (PI / (4.0 * b)).cos())
            } else {
                let num = (PI * t * (1.0 - b)).sin() + 4.0 * b * t * (PI * t * (1.0 + b)).cos();
                let den = PI * t * (1.0 - (4.0 * b * t).powi(2));
                num / den
            }
        })
        .collect();
    let e = energy(&h).sqrt();
    h.iter_mut().for_each(|v| *v /= e);
    h
}

/// Full linear convolution, output length `x.len() + h.len() - 1`.
pub fn convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let mut y = vec![0.0; x.len() + h.len() - 1];
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (yk, &hk) in y[i..i + h.len()].iter_mut().zip(h) {
            *yk += xi * hk;
        }
    }
    y
}

/// Blackman-windowed sinc low-pass, cutoff `cutoff` in cycles/sample, unity DC gain.
pub fn lowpass_taps(cutoff: f64, half_len: usize) -> Vec<f64> {
    let n = 2 * half_len + 1;
    let mut h: Vec<f64> = (0..n)
        .map(|i| {
            let k = i as f64 - half_len as f64;
            let sinc = if k == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * PI * cutoff * k).sin() / (PI * k)
            };
            let w = 0.42 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()
                + 0.08 * (4.0 * PI * i as f64 / (n - 1) as f64).cos();
            sinc * w
        })
        .collect();
    let s: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= s);
    h
}

const RESAMPLE_HALF_TAPS: usize = 24;

/// Band-limited interpolation by an integer factor. Output sample `n * factor`
/// lines up with input sample `n`; the output has `x.len() * factor` samples.
pub fn interpolate(x: &[f64], factor: usize) -> Vec<f64> {
    assert!(factor >= 1);
    if factor == 1 {
        return x.to_vec();
    }
    let half = RESAMPLE_HALF_TAPS * factor;
    let h = lowpass_taps(0.5 / factor as f64, half);
    let n_out = x.len() * factor;
    let mut y = vec![0.0; n_out];
    // polyphase: y[m] = factor * sum_k x[k] h[m - k*factor + half]
    for (m, ym) in y.iter_mut().enumerate() {
        let lo = m.saturating_sub(half).div_ceil(factor).min(x.len());
        let hi = ((m + half) / factor + 1).min(x.len());
        let mut acc = 0.0;
        for (k, xk) in x.iter().enumerate().take(hi).skip(lo) {
            acc += xk * h[m + half - k * factor];
        }
        *ym = acc * factor as f64;
    }
    y
}

/// Band-limited decimation by an integer factor (anti-alias filter, then keep
/// every `factor`-th sample). Output sample `n` lines up with input `n * factor`.
pub fn decimate(x: &[f64], factor: usize) -> Vec<f64> {
    assert!(factor >= 1);
    if factor == 1 {
        return x.to_vec();
    }
    let half = RESAMPLE_HALF_TAPS * factor;
    let h = lowpass_taps(0.5 / factor as f64, half);
    let n_out = x.len() / factor;
    (0..n_out)
        .map(|n| {
            let c = n * factor;
            let lo = c.saturating_sub(half);
            let hi = (c + half + 1).min(x.len());
            (lo..hi).map(|j| x[j] * h[j + half - c]).sum()
        })
        .collect()
}

/// Cached forward/inverse transforms of one size, scaled to be unitary.
#[derive(Clone)]
pub struct UnitaryFft {
    size: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl UnitaryFft {
    pub fn new(size: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            size,
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
            scale: 1.0 / (size as f64).sqrt(),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.forward.process(buf);
        buf.iter_mut().for_each(|v| *v *= self.scale);
    }

    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.inverse.process(buf);
        buf.iter_mut().for_each(|v| *v *= self.scale);
    }
}

impl std::fmt::Debug for UnitaryFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UnitaryFft").field("size", &self.size).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_function_known_values() {
        assert!((q_function(0.0) - 0.5).abs() < 1e-15);
        assert!((q_function(3.0) - 1.349_898_031_630_094_6e-3).abs() < 1e-12);
        assert!((q_inverse(1e-3) - 3.090_232_306_167_813_5).abs() < 1e-9);
    }

    #[test]
    fn rrc_is_unit_energy_and_nyquist_when_cascaded() {
        let sps = 4;
        let h = rrc_taps(0.1, sps, 64);
        assert!((energy(&h) - 1.0).abs() < 1e-12);
        let rc = convolve(&h, &h);
        let c = h.len() - 1;
        assert!((rc[c] - 1.0).abs() < 1e-12);
        for k in 1..64 {
            assert!(rc[c + k * sps].abs() < 1e-3, "isi at {k}: {}", rc[c + k * sps]);
        }
    }

    #[test]
    fn interpolate_then_decimate_recovers_band_limited_signal() {
        let x: Vec<f64> = (0..400).map(|n| (2.0 * PI * 0.05 * n as f64).sin()).collect();
        let up = interpolate(&x, 4);
        for n in 60..340 {
            assert!((up[4 * n] - x[n]).abs() < 1e-3);
            let mid = (2.0 * PI * 0.05 * (n as f64 + 0.5)).sin();
            assert!((up[4 * n + 2] - mid).abs() < 1e-3);
        }
        let down = decimate(&up, 4);
        for n in 60..340 {
            assert!((down[n] - x[n]).abs() < 1e-3);
        }
    }

    #[test]
    fn unitary_fft_preserves_energy() {
        let f = UnitaryFft::new(64);
        let mut buf: Vec<Complex64> = (0..64).map(|k| Complex64::new(k as f64, -(k as f64) / 3.0)).collect();
        let e0: f64 = buf.iter().map(|v| v.norm_sqr()).sum();
        f.forward(&mut buf);
        let e1: f64 = buf.iter().map(|v| v.norm_sqr()).sum();
        assert!((e0 - e1).abs() < 1e-9 * e0);
    }
}
