//! Receiver DSP: synchronization, matched filtering, OFDM demodulation with
//! single-tap equalization, and hard decisions with error counting.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::{self, UnitaryFft};
use crate::equalizer::{volterra_apply, VolterraWeights};
use crate::error::{Error, Result};
use crate::loading::LoadingPlan;
use crate::qam;
use crate::tx::{OfdmConfig, OokConfig};

/// Correlation peak below which synchronization is declared failed.
pub const SYNC_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BerReport {
    pub bits_compared: u64,
    pub bit_errors: u64,
}

impl BerReport {
    pub fn ber(&self) -> f64 {
        if self.bits_compared == 0 {
            0.0
        } else {
            self.bit_errors as f64 / self.bits_compared as f64
        }
    }

    pub fn merge(&mut self, other: &BerReport) {
        self.bits_compared += other.bits_compared;
        self.bit_errors += other.bit_errors;
    }

    /// Binomial standard error of the BER estimate.
    pub fn std_error(&self) -> f64 {
        if self.bits_compared == 0 {
            return 0.0;
        }
        let p = self.ber();
        (p * (1.0 - p) / self.bits_compared as f64).sqrt()
    }
}

/// Lag in `0..=max_lag` that maximizes the normalized (mean-removed)
/// cross-correlation with `preamble`. Ties go to the smallest lag.
pub fn synchronize(rx: &[f64], preamble: &[f64], max_lag: Option<usize>) -> Result<usize> {
    let l = preamble.len();
    if l < 2 || rx.len() <= l {
        return Err(Error::Framing(format!(
            "received sequence ({}) must be longer than the preamble ({l})",
            rx.len()
        )));
    }
    let last = (rx.len() - l).min(max_lag.unwrap_or(usize::MAX));
    let pm = dsp::mean(preamble);
    let p: Vec<f64> = preamble.iter().map(|v| v - pm).collect();
    let pn = dsp::energy(&p).sqrt();
    if pn == 0.0 {
        return Err(Error::Degenerate("preamble has no AC content".into()));
    }
    let mut sum: f64 = rx[..l].iter().sum();
    let mut sum_sq: f64 = rx[..l].iter().map(|v| v * v).sum();
    let (mut best, mut best_lag) = (f64::NEG_INFINITY, 0usize);
    for lag in 0..=last {
        if lag > 0 {
            let (out, inn) = (rx[lag - 1], rx[lag + l - 1]);
            sum += inn - out;
            sum_sq += inn * inn - out * out;
        }
        let seg_var = (sum_sq - sum * sum / l as f64).max(0.0);
        if seg_var <= 1e-300 {
            continue;
        }
        // Σ(r−r̄)(p−p̄) = Σ r·(p−p̄) because Σ(p−p̄) = 0.
        let dot: f64 = rx[lag..lag + l].iter().zip(&p).map(|(a, b)| a * b).sum();
        let rho = dot / (seg_var.sqrt() * pn);
        if rho > best {
            best = rho;
            best_lag = lag;
        }
    }
    if !(best >= SYNC_THRESHOLD) {
        return Err(Error::SyncFailure { peak: best.max(-1.0) });
    }
    Ok(best_lag)
}

/// Correlates with the RRC pulse and samples at symbol instants:
/// output k = Σ_j rx[offset + k·sps + j]·h[j].
pub fn matched_filter_downsample(rx: &[f64], cfg: &OokConfig, offset: usize, n_symbols: usize) -> Result<Vec<f64>> {
    cfg.validate()?;
    let h = cfg.pulse();
    let sps = cfg.samples_per_symbol;
    let needed = offset + n_symbols.saturating_sub(1) * sps + h.len();
    if n_symbols > 0 && needed > rx.len() {
        return Err(Error::Framing(format!(
            "matched filter needs {needed} samples, only {} available",
            rx.len()
        )));
    }
    Ok((0..n_symbols)
        .map(|k| {
            let s = offset + k * sps;
            rx[s..s + h.len()].iter().zip(&h).map(|(a, b)| a * b).sum()
        })
        .collect())
}

/// Runs the equalizer and realigns its output: element n of the result
/// estimates reference n (the decision delay is removed, tail zero-padded).
pub fn equalize_aligned(x: &[f64], w: &VolterraWeights, delay: usize) -> Vec<f64> {
    let mut padded = x.to_vec();
    padded.extend(std::iter::repeat_n(0.0, delay));
    volterra_apply(&padded, w).split_off(delay)
}

/// Forward transform of CP-stripped blocks and single-tap equalization.
#[derive(Debug, Clone)]
pub struct OfdmDemodulator {
    cfg: OfdmConfig,
    fft: UnitaryFft,
}

impl OfdmDemodulator {
    pub fn new(cfg: &OfdmConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg: cfg.clone(), fft: UnitaryFft::new(cfg.fft_size) })
    }

    /// Data-subcarrier bins of `n_blocks` consecutive blocks starting at `offset`,
    /// before equalization.
    pub fn raw_blocks(&self, samples: &[f64], offset: usize, n_blocks: usize) -> Result<Vec<Vec<Complex64>>> {
        let bl = self.cfg.block_len();
        if offset + n_blocks * bl > samples.len() {
            return Err(Error::Framing(format!(
                "{n_blocks} blocks at offset {offset} need {} samples, have {}",
                offset + n_blocks * bl,
                samples.len()
            )));
        }
        let n = self.cfg.fft_size;
        let cp = self.cfg.cp_length;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        Ok((0..n_blocks)
            .map(|b| {
                let start = offset + b * bl + cp;
                for (c, &v) in buf.iter_mut().zip(&samples[start..start + n]) {
                    *c = Complex64::new(v, 0.0);
                }
                self.fft.forward(&mut buf);
                buf[1..=self.cfg.n_data_subcarriers].to_vec()
            })
            .collect())
    }

    /// Least-squares channel estimate averaged over known pilot blocks.
    pub fn estimate_channel(&self, raw: &[Vec<Complex64>], pilots: &[Vec<Complex64>]) -> Result<Vec<Complex64>> {
        if raw.len() != pilots.len() || raw.is_empty() {
            return Err(Error::Framing("pilot block count mismatch".into()));
        }
        let n = self.cfg.n_data_subcarriers;
        Ok((0..n)
            .map(|k| {
                let (mut num, mut den) = (Complex64::new(0.0, 0.0), 0.0);
                for (y, x) in raw.iter().zip(pilots) {
                    num += y[k] * x[k].conj();
                    den += x[k].norm_sqr();
                }
                if den > 0.0 {
                    num / den
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect())
    }

    /// Divides every bin by its channel estimate.
    pub fn equalize(&self, raw: Vec<Vec<Complex64>>, channel: &[Complex64], active: &[bool]) -> Result<Vec<Vec<Complex64>>> {
        if channel.len() != self.cfg.n_data_subcarriers {
            return Err(Error::Framing("channel estimate length differs from subcarrier count".into()));
        }
        for (k, (h, &on)) in channel.iter().zip(active).enumerate() {
            if on && h.norm_sqr() == 0.0 {
                return Err(Error::FdeSingularity(k));
            }
        }
        Ok(raw
            .into_iter()
            .map(|mut block| {
                for (s, h) in block.iter_mut().zip(channel) {
                    *s = if h.norm_sqr() > 0.0 { *s / h } else { Complex64::new(0.0, 0.0) };
                }
                block
            })
            .collect())
    }
}

/// Optional time-domain nonlinear equalizer in front of the FFT.
#[derive(Debug, Clone, Copy)]
pub struct TimeDomainEq<'a> {
    pub weights: &'a VolterraWeights,
    pub delay: usize,
}

/// Demodulates `n_blocks` blocks starting at `offset`: optional Volterra
/// equalization on the time samples, CP removal, FFT, single-tap FDE.
/// Returned grid is indexed `[block][subcarrier]`.
pub fn ofdm_demodulate(
    rx: &[f64],
    cfg: &OfdmConfig,
    offset: usize,
    n_blocks: usize,
    channel_estimate: &[Complex64],
    neq: Option<TimeDomainEq<'_>>,
) -> Result<Vec<Vec<Complex64>>> {
    let demod = OfdmDemodulator::new(cfg)?;
    let equalized;
    let samples = match neq {
        Some(eq) => {
            equalized = equalize_aligned(rx, eq.weights, eq.delay);
            &equalized[..]
        }
        None => rx,
    };
    let raw = demod.raw_blocks(samples, offset, n_blocks)?;
    let active: Vec<bool> = cfg.plan().bits.iter().map(|&b| b > 0).collect();
    demod.equalize(raw, channel_estimate, &active)
}

/// Slicer threshold midway between the class-conditional means.
pub fn train_slicer(soft: &[f64], bits: &[u8]) -> Result<f64> {
    if soft.len() != bits.len() {
        return Err(Error::Framing(format!("{} soft values vs {} bits", soft.len(), bits.len())));
    }
    let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0usize, 0.0, 0usize);
    for (&v, &b) in soft.iter().zip(bits) {
        if b & 1 == 1 {
            s1 += v;
            n1 += 1;
        } else {
            s0 += v;
            n0 += 1;
        }
    }
    if n0 == 0 || n1 == 0 {
        return Err(Error::Degenerate("slicer training needs both symbol classes".into()));
    }
    Ok(0.5 * (s1 / n1 as f64 + s0 / n0 as f64))
}

/// How soft values turn into bits.
#[derive(Debug, Clone, Copy)]
pub enum Decision<'a> {
    /// Bit 1 above the threshold.
    OokThreshold(f64),
    /// Per-subcarrier minimum-distance Gray demapping.
    Qam(&'a LoadingPlan),
}

/// Received samples in the shape the decision rule expects.
#[derive(Debug, Clone, Copy)]
pub enum Soft<'a> {
    Samples(&'a [f64]),
    Blocks(&'a [Vec<Complex64>]),
}

pub fn decide_and_count(soft: Soft<'_>, truth: &[u8], scheme: Decision<'_>) -> Result<BerReport> {
    let decided: Vec<u8> = match (soft, scheme) {
        (Soft::Samples(s), Decision::OokThreshold(t)) => s.iter().map(|&v| u8::from(v > t)).collect(),
        (Soft::Blocks(blocks), Decision::Qam(plan)) => {
            let mut out = Vec::with_capacity(blocks.len() * plan.bits_per_block());
            for block in blocks {
                if block.len() != plan.bits.len() {
                    return Err(Error::Framing("block width differs from loading plan".into()));
                }
                for ((&s, &b), &e) in block.iter().zip(&plan.bits).zip(&plan.energy) {
                    if b > 0 {
                        qam::demap_symbol(s / e.sqrt(), b, &mut out);
                    }
                }
            }
            out
        }
        _ => return Err(Error::Framing("soft values do not match the decision scheme".into())),
    };
    if decided.len() != truth.len() {
        return Err(Error::Framing(format!("{} decided bits vs {} truth bits", decided.len(), truth.len())));
    }
    if decided.is_empty() {
        return Err(Error::Framing("nothing to compare".into()));
    }
    let errors = decided.iter().zip(truth).filter(|(a, b)| **a != (**b & 1)).count();
    Ok(BerReport { bits_compared: decided.len() as u64, bit_errors: errors as u64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ook_exact_and_inverted() {
        let truth = [1u8, 0, 0, 1, 1, 0];
        let soft: Vec<f64> = truth.iter().map(|&b| 2.0 * f64::from(b) - 1.0).collect();
        let r = decide_and_count(Soft::Samples(&soft), &truth, Decision::OokThreshold(0.0)).unwrap();
        assert_eq!(r.ber(), 0.0);
        let neg: Vec<f64> = soft.iter().map(|v| -v).collect();
        let r = decide_and_count(Soft::Samples(&neg), &truth, Decision::OokThreshold(0.0)).unwrap();
        assert_eq!(r.ber(), 1.0);
    }

    #[test]
    fn length_mismatch_is_framing() {
        let r = decide_and_count(Soft::Samples(&[1.0, -1.0]), &[1], Decision::OokThreshold(0.0));
        assert!(matches!(r, Err(Error::Framing(_))));
        let r = decide_and_count(Soft::Samples(&[]), &[], Decision::OokThreshold(0.0));
        assert!(r.is_err());
    }

    #[test]
    fn slicer_is_midpoint_of_class_means() {
        let t = train_slicer(&[3.0, 1.0, 2.9, 1.1], &[1, 0, 1, 0]).unwrap();
        assert!((t - 2.0).abs() < 1e-12);
        assert!(train_slicer(&[1.0], &[1]).is_err());
    }

    #[test]
    fn sync_finds_embedded_preamble() {
        let pre: Vec<f64> = crate::tx::generate_bits(200, 5).iter().map(|&b| f64::from(b) * 2.0 - 1.0).collect();
        let mut rx = vec![0.0; 3000];
        rx[1234..1434].copy_from_slice(&pre);
        assert_eq!(synchronize(&rx, &pre, None).unwrap(), 1234);
        assert!(synchronize(&pre[..100], &pre, None).is_err());
    }

    #[test]
    fn matched_filter_framing() {
        let cfg = OokConfig::default();
        assert!(matches!(
            matched_filter_downsample(&[0.0; 10], &cfg, 0, 3),
            Err(Error::Framing(_))
        ));
    }

    #[test]
    fn scalar_fde_removes_gain() {
        let cfg = OfdmConfig { fft_size: 64, n_data_subcarriers: 31, cp_length: 4, ..Default::default() };
        let m = crate::tx::OfdmModulator::new(&cfg).unwrap();
        let bits = crate::tx::generate_bits(62, 1);
        let syms = qam::qam_map(&bits, 4).unwrap();
        let x = m.assemble(&syms).unwrap();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let h = vec![Complex64::new(2.0, 0.0); 31];
        let out = ofdm_demodulate(&y, &cfg, 0, 1, &h, None).unwrap();
        for (a, b) in out[0].iter().zip(&syms) {
            assert!((a - b).norm() < 1e-12);
        }
        let zero = vec![Complex64::new(0.0, 0.0); 31];
        assert!(matches!(ofdm_demodulate(&y, &cfg, 0, 1, &zero, None), Err(Error::FdeSingularity(0))));
    }
}
