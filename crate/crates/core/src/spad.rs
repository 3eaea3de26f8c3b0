//! SPAD-array (SiPM) receiver model.
//!
//! Closed-form saturation laws for a non-paralyzable array, a photon-level
//! Monte Carlo detector with per-microcell dead time, and a first-order analog
//! front end with additive Gaussian noise.

use rand_distr::{Binomial, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::waveform::{ElectricalWaveform, OpticalWaveform};
use crate::{rng_from_seed, PLANCK, SPEED_OF_LIGHT};

/// Physical constants of the detector array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpadArrayConfig {
    pub n_microcells: u32,
    /// Seconds. Zero models an ideal counter with no dead time.
    pub dead_time: f64,
    pub pde: f64,
    /// Charge drawn to recharge one microcell, coulombs.
    pub recharge_charge: f64,
    /// Meters.
    pub wavelength: f64,
    /// 3-dB bandwidth of the analog output, hertz.
    pub f3db: f64,
    /// Array-wide dark count rate, counts/second.
    pub dark_count_rate: f64,
    /// Informational only.
    pub fill_factor: f64,
}

impl Default for SpadArrayConfig {
    fn default() -> Self {
        Self {
            n_microcells: 14410,
            dead_time: 66e-9,
            pde: 0.36,
            recharge_charge: 0.14e-12,
            wavelength: 405e-9,
            f3db: 250e6,
            dark_count_rate: 0.0,
            fill_factor: 0.62,
        }
    }
}

impl SpadArrayConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("spad: {what}")));
        if self.n_microcells < 1 {
            return bad("n_microcells must be at least 1");
        }
        if !(self.dead_time >= 0.0 && self.dead_time.is_finite()) {
            return bad("dead_time must be finite and nonnegative");
        }
        if !(self.pde > 0.0 && self.pde <= 1.0) {
            return bad("pde must lie in (0, 1]");
        }
        if !(self.recharge_charge > 0.0) {
            return bad("recharge_charge must be positive");
        }
        if !(self.wavelength > 0.0) {
            return bad("wavelength must be positive");
        }
        if !(self.f3db > 0.0) {
            return bad("f3db must be positive");
        }
        if !(self.dark_count_rate >= 0.0 && self.dark_count_rate.is_finite()) {
            return bad("dark_count_rate must be finite and nonnegative");
        }
        Ok(())
    }

    /// Energy of one photon, hν, in joules.
    pub fn photon_energy(&self) -> f64 {
        PLANCK * SPEED_OF_LIGHT / self.wavelength
    }

    /// Rate of photons that would trigger an avalanche on a live microcell,
    /// P·PDE/hν, in 1/s.
    pub fn detectable_photon_rate(&self, power: f64) -> f64 {
        power * self.pde / self.photon_energy()
    }

    /// Smallest Monte Carlo sample rate for which a waveform with peak power
    /// `peak_power` satisfies the bin-occupancy bound.
    pub fn min_sample_rate(&self, peak_power: f64) -> f64 {
        let rate = self.detectable_photon_rate(peak_power) + self.dark_count_rate;
        rate * OCCUPANCY_DIVISOR / f64::from(self.n_microcells)
    }
}

/// Expected array-wide arrivals per bin may not exceed `n_microcells / 10`.
const OCCUPANCY_DIVISOR: f64 = 10.0;

/// Mean detected photon rate C = P·PDE / (hν + P·PDE·T_d/N) of a
/// non-paralyzable array, counts/second.
pub fn mean_detected_rate(p_r: f64, cfg: &SpadArrayConfig) -> Result<f64> {
    if !(p_r >= 0.0) {
        return Err(Error::Domain(format!("received power must be nonnegative, got {p_r}")));
    }
    let absorbed = p_r * cfg.pde;
    Ok(absorbed / (cfg.photon_energy() + absorbed * cfg.dead_time / f64::from(cfg.n_microcells)))
}

/// Saturated count rate N/T_d.
pub fn saturation_limit(cfg: &SpadArrayConfig) -> f64 {
    f64::from(cfg.n_microcells) / cfg.dead_time
}

/// Bias current Q·C needed to hold the operating bias, amperes.
pub fn bias_current(p_r: f64, cfg: &SpadArrayConfig) -> Result<f64> {
    Ok(cfg.recharge_charge * mean_detected_rate(p_r, cfg)?)
}

/// Detected avalanches per time bin.
#[derive(Debug, Clone, PartialEq)]
pub struct CountSignal {
    pub bin_width: f64,
    pub counts: Vec<u32>,
}

impl CountSignal {
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    /// Empirical detected rate over the whole record, counts/second.
    pub fn rate(&self) -> f64 {
        if self.counts.is_empty() {
            return 0.0;
        }
        self.total() as f64 / (self.counts.len() as f64 * self.bin_width)
    }
}

/// Photon-level Monte Carlo of the array with non-paralyzable dead time.
///
/// Arrivals in each bin are Poisson. Only the number of live microcells is
/// tracked: each live cell fires if at least one of the bin's arrivals lands
/// on it, and a cell that fired is returned to the live pool after the dead
/// time through a ring of per-bin release counts. The array starts in the
/// steady state for the first sample's power, as if it had been lit at that
/// level indefinitely.
pub fn simulate_counts(input: &OpticalWaveform, cfg: &SpadArrayConfig, seed: u64) -> Result<CountSignal> {
    cfg.validate()?;
    let dt = 1.0 / input.sample_rate();
    let n_cells = cfg.n_microcells;
    let limit = f64::from(n_cells) / OCCUPANCY_DIVISOR;
    let peak = input.samples().iter().copied().fold(0.0, f64::max);
    let peak_arrivals = (cfg.detectable_photon_rate(peak) + cfg.dark_count_rate) * dt;
    if peak_arrivals > limit {
        return Err(Error::BinOccupancy {
            expected_arrivals: peak_arrivals,
            limit,
            min_sample_rate: cfg.min_sample_rate(peak),
        });
    }

    let mut rng = rng_from_seed(seed);
    let scale = cfg.pde / cfg.photon_energy() * dt;
    let dark = cfg.dark_count_rate * dt;
    let draw_arrivals = |p: f64, rng: &mut crate::Rng| -> u64 {
        let mean = p * scale + dark;
        if mean <= 0.0 {
            0
        } else {
            Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0)
        }
    };

    let counts = if cfg.dead_time == 0.0 {
        input.samples().iter().map(|&p| draw_arrivals(p, &mut rng) as u32).collect()
    } else {
        // A cell firing mid-bin j is dead for T_d and rejoins the pool at
        // bin j + 1 + dead_bins on average.
        let dead_bins = (cfg.dead_time / dt - 0.5).round().max(0.0) as usize;
        let (mut release, mut live) = steady_state(input.samples().first().copied().unwrap_or(0.0), cfg, dt, dead_bins + 1);
        let ln_miss = (-1.0 / f64::from(n_cells)).ln_1p();
        input
            .samples()
            .iter()
            .enumerate()
            .map(|(j, &p)| {
                let slot = j % release.len();
                live += release[slot];
                let arrivals = draw_arrivals(p, &mut rng);
                let fired = if arrivals == 0 || live == 0 {
                    0
                } else {
                    let hit = -(arrivals as f64 * ln_miss).exp_m1();
                    Binomial::new(u64::from(live), hit.min(1.0))
                        .map(|d| d.sample(&mut rng) as u32)
                        .unwrap_or(0)
                };
                live -= fired;
                release[slot] = fired;
                fired
            })
            .collect()
    };
    Ok(CountSignal { bin_width: dt, counts })
}

/// Dead-time state of an array that has been lit at `power` indefinitely:
/// every slot of the release ring holds one bin's worth of steady-state
/// counts (spread so the integer total matches) and the rest are live.
fn steady_state(power: f64, cfg: &SpadArrayConfig, dt: f64, slots: usize) -> (Vec<u32>, u32) {
    let lambda = cfg.detectable_photon_rate(power) + cfg.dark_count_rate;
    let n = f64::from(cfg.n_microcells);
    let per_bin = lambda / (1.0 + lambda * cfg.dead_time / n) * dt;
    let ring: Vec<u32> = (0..slots)
        .map(|i| ((i + 1) as f64 * per_bin).floor() as u32 - (i as f64 * per_bin).floor() as u32)
        .collect();
    let busy: u32 = ring.iter().sum();
    (ring, cfg.n_microcells.saturating_sub(busy))
}

/// Amplifier and output stage of the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontEndConfig {
    /// 3-dB bandwidth of the first-order low-pass, hertz.
    pub f3db: f64,
    /// Post-filter noise, volts rms.
    pub awgn_sigma: f64,
    /// Volts per detected avalanche.
    pub gain: f64,
}

impl FrontEndConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.f3db > 0.0) {
            return Err(Error::Config("front end: f3db must be positive".into()));
        }
        if !(self.awgn_sigma >= 0.0) {
            return Err(Error::Config("front end: awgn_sigma must be nonnegative".into()));
        }
        if !(self.gain > 0.0) {
            return Err(Error::Config("front end: gain must be positive".into()));
        }
        Ok(())
    }
}

/// First-order low-pass discretized by the bilinear transform with the
/// 3-dB point prewarped, so the digital response is exactly 1/√2 at `f3db`.
#[derive(Debug, Clone, Copy)]
pub struct FirstOrderLowpass {
    b0: f64,
    a1: f64,
}

impl FirstOrderLowpass {
    pub fn new(f3db: f64, sample_rate: f64) -> Self {
        let w = (std::f64::consts::PI * (f3db / sample_rate).min(0.499_999)).tan();
        Self {
            b0: w / (1.0 + w),
            a1: (w - 1.0) / (1.0 + w),
        }
    }

    pub fn filter(&self, x: impl IntoIterator<Item = f64>) -> Vec<f64> {
        let (mut x1, mut y1) = (0.0, 0.0);
        x.into_iter()
            .map(|x0| {
                let y0 = self.b0 * (x0 + x1) - self.a1 * y1;
                x1 = x0;
                y1 = y0;
                y0
            })
            .collect()
    }

    /// |H(e^{j2πf/fs})|.
    pub fn magnitude(&self, f: f64, sample_rate: f64) -> f64 {
        let z = num_complex::Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * f / sample_rate);
        let h = self.b0 * (1.0 + z) / (1.0 + self.a1 * z);
        h.norm()
    }
}

/// Converts counts to volts: gain, first-order low-pass, then AWGN.
pub fn front_end(counts: &CountSignal, fe: &FrontEndConfig, seed: u64) -> ElectricalWaveform {
    let fs = 1.0 / counts.bin_width;
    let lp = FirstOrderLowpass::new(fe.f3db, fs);
    let mut y = lp.filter(counts.counts.iter().map(|&c| fe.gain * f64::from(c)));
    if fe.awgn_sigma > 0.0 {
        let mut rng = rng_from_seed(seed);
        let n = Normal::new(0.0, fe.awgn_sigma).expect("finite sigma");
        y.iter_mut().for_each(|v| *v += n.sample(&mut rng));
    }
    ElectricalWaveform::new(fs, y)
}
