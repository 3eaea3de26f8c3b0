//! Per-subcarrier SNR estimation and adaptive bit/energy loading.
//!
//! Loading follows the incremental (Hughes-Hartogs / Levin-Campello) scheme
//! under the SNR-gap approximation: a subcarrier with linear SNR `snr` and
//! energy scale `e` carries `b` bits when `snr * e >= gap * (2^b - 1)`.
//! Increments are granted cheapest-energy-per-bit first.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::q_inverse;
use crate::error::{Error, Result};
use crate::tx::OfdmConfig;

/// Linear SNR reported when the measured error power is zero (60 dB).
pub const SNR_CEILING: f64 = 1e6;

/// Minimum pilot observations per subcarrier for [`estimate_snr`].
pub const MIN_PILOTS_PER_SUBCARRIER: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrProfile {
    pub snr: Vec<f64>,
}

impl SnrProfile {
    pub fn uniform(snr: f64, n: usize) -> Self {
        Self { snr: vec![snr; n] }
    }

    pub fn len(&self) -> usize {
        self.snr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snr.is_empty()
    }

    pub fn snr_db(&self) -> Vec<f64> {
        self.snr.iter().map(|s| 10.0 * s.log10()).collect()
    }
}

/// Per-subcarrier bits and energy scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadingPlan {
    pub bits: Vec<u32>,
    pub energy: Vec<f64>,
    pub total_rate: f64,
}

impl LoadingPlan {
    /// Same constellation on every subcarrier at unit energy.
    pub fn uniform(bits: u32, n: usize, cfg: &OfdmConfig) -> Self {
        let mut plan = Self {
            bits: vec![bits; n],
            energy: vec![if bits == 0 { 0.0 } else { 1.0 }; n],
            total_rate: 0.0,
        };
        plan.total_rate = achievable_rate(&plan, cfg);
        plan
    }

    pub fn bits_per_block(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn active(&self) -> usize {
        self.bits.iter().filter(|&&b| b > 0).count()
    }

    /// Mean energy over subcarriers that carry bits.
    pub fn mean_active_energy(&self) -> f64 {
        let a = self.active();
        if a == 0 {
            return 0.0;
        }
        self.bits
            .iter()
            .zip(&self.energy)
            .filter(|(&b, _)| b > 0)
            .map(|(_, e)| e)
            .sum::<f64>()
            / a as f64
    }
}

/// Estimates SNR per subcarrier from known pilots. Both grids are indexed
/// `[observation][subcarrier]`.
pub fn estimate_snr(rx: &[Vec<Complex64>], tx: &[Vec<Complex64>]) -> Result<SnrProfile> {
    if rx.len() != tx.len() {
        return Err(Error::Framing(format!("{} received vs {} transmitted pilot blocks", rx.len(), tx.len())));
    }
    if rx.len() < MIN_PILOTS_PER_SUBCARRIER {
        return Err(Error::Framing(format!(
            "need at least {MIN_PILOTS_PER_SUBCARRIER} pilots per subcarrier, got {}",
            rx.len()
        )));
    }
    let n_sc = tx[0].len();
    if rx.iter().chain(tx).any(|b| b.len() != n_sc) {
        return Err(Error::Framing("pilot blocks differ in subcarrier count".into()));
    }
    let snr = (0..n_sc)
        .map(|k| {
            let (mut sig, mut err) = (0.0, 0.0);
            for (y, x) in rx.iter().zip(tx) {
                sig += x[k].norm_sqr();
                err += (y[k] - x[k]).norm_sqr();
            }
            if err == 0.0 {
                SNR_CEILING
            } else {
                (sig / err).min(SNR_CEILING)
            }
        })
        .collect();
    Ok(SnrProfile { snr })
}

/// SNR gap Γ = (Q⁻¹(BER/2))² / 3 for uncoded square QAM.
pub fn snr_gap(target_ber: f64) -> Result<f64> {
    if !(target_ber > 0.0 && target_ber < 0.5) {
        return Err(Error::Domain(format!("target BER must lie in (0, 0.5), got {target_ber}")));
    }
    Ok(q_inverse(target_ber / 2.0).powi(2) / 3.0)
}

/// Tunables of the loading algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadingOptions {
    /// Allowed nonzero bit counts, a subset of {1, 2, 4, 6, 8, 10}.
    pub allowed_bits: Vec<u32>,
    /// Extra SNR margin on top of the gap, dB.
    pub margin_db: f64,
    /// Largest energy one subcarrier may draw before the final rescale.
    /// `None` lets energy move freely between subcarriers.
    pub energy_cap: Option<f64>,
}

impl Default for LoadingOptions {
    fn default() -> Self {
        Self {
            allowed_bits: crate::qam::SUPPORTED_BITS.to_vec(),
            margin_db: 0.0,
            energy_cap: Some(1.0),
        }
    }
}

/// SNR needed to carry `bits` in units of the gap: 2^b − 1 for square QAM.
/// BPSK needs 1.5, which gives it the minimum distance of 4-QAM at 3Γ
/// (the plain gap formula would leave it at roughly 3× the target BER).
pub fn required_snr_factor(bits: u32) -> f64 {
    match bits {
        0 => 0.0,
        1 => 1.5,
        b => ((1u64 << b) - 1) as f64,
    }
}

struct Increment {
    cost_per_bit: f64,
    subcarrier: usize,
    energy: f64,
    to_level: usize,
}

impl PartialEq for Increment {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Increment {}
impl PartialOrd for Increment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Increment {
    // Max-heap: cheaper first, then lower subcarrier index.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost_per_bit
            .total_cmp(&self.cost_per_bit)
            .then_with(|| other.subcarrier.cmp(&self.subcarrier))
    }
}

/// Rate-adaptive greedy bit and energy loading.
///
/// Every subcarrier that is switched on brings one unit of energy to the
/// shared budget. After the greedy pass the leftover budget is spread by a
/// common scale so that active subcarriers average unit energy.
pub fn load_bits_energy(
    profile: &SnrProfile,
    target_ber: f64,
    cfg: &OfdmConfig,
    opts: &LoadingOptions,
) -> Result<LoadingPlan> {
    let gap = snr_gap(target_ber)? * 10f64.powf(opts.margin_db / 10.0);
    if profile.len() != cfg.n_data_subcarriers {
        return Err(Error::Framing(format!(
            "profile has {} subcarriers, config has {}",
            profile.len(),
            cfg.n_data_subcarriers
        )));
    }
    if let Some(s) = profile.snr.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(Error::Domain(format!("SNR values must be finite and nonnegative, got {s}")));
    }
    let mut levels: Vec<u32> = opts.allowed_bits.clone();
    levels.sort_unstable();
    levels.dedup();
    if let Some(b) = levels.iter().find(|b| !crate::qam::SUPPORTED_BITS.contains(b)) {
        return Err(Error::Config(format!("loading: unsupported bit count {b}")));
    }
    levels.insert(0, 0);

    let cost = |k: usize, from: usize, to: usize| -> f64 {
        gap * (required_snr_factor(levels[to]) - required_snr_factor(levels[from])) / profile.snr[k]
    };
    let candidate = |k: usize, from: usize| -> Option<Increment> {
        let to = from + 1;
        if to >= levels.len() || profile.snr[k] <= 0.0 {
            return None;
        }
        let energy = cost(k, from, to);
        Some(Increment {
            cost_per_bit: energy / f64::from(levels[to] - levels[from]),
            subcarrier: k,
            energy,
            to_level: to,
        })
    };

    let n = profile.len();
    let mut level = vec![0usize; n];
    let mut energy = vec![0.0; n];
    let mut heap: BinaryHeap<Increment> = (0..n).filter_map(|k| candidate(k, 0)).collect();
    let (mut budget, mut used) = (0.0f64, 0.0f64);
    const SLACK: f64 = 1e-12;

    while let Some(inc) = heap.pop() {
        let k = inc.subcarrier;
        let activating = level[k] == 0;
        let new_e = energy[k] + inc.energy;
        let new_budget = budget + if activating { 1.0 } else { 0.0 };
        let fits_cap = opts.energy_cap.is_none_or(|cap| new_e <= cap * (1.0 + SLACK));
        let fits_total = used + inc.energy <= new_budget * (1.0 + SLACK);
        if !(fits_cap && fits_total) {
            // Higher levels on this subcarrier cost strictly more.
            continue;
        }
        level[k] = inc.to_level;
        energy[k] = new_e;
        used += inc.energy;
        budget = new_budget;
        if let Some(next) = candidate(k, inc.to_level) {
            heap.push(next);
        }
    }

    let bits: Vec<u32> = level.iter().map(|&l| levels[l]).collect();
    let active = bits.iter().filter(|&&b| b > 0).count();
    if active > 0 {
        let s = active as f64 / used;
        energy.iter_mut().for_each(|e| *e *= s);
    }
    let mut plan = LoadingPlan { bits, energy, total_rate: 0.0 };
    plan.total_rate = achievable_rate(&plan, cfg);
    Ok(plan)
}

/// Net bit rate of a plan: bits per block over the block duration including
/// the cyclic prefix.
pub fn achievable_rate(plan: &LoadingPlan, cfg: &OfdmConfig) -> f64 {
    let bits: u64 = plan.bits.iter().map(|&b| u64::from(b)).sum();
    let spacing = cfg.modulation_bandwidth / cfg.fft_size as f64;
    bits as f64 * spacing * cfg.fft_size as f64 / (cfg.fft_size + cfg.cp_length) as f64
}
