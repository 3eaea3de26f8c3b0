//! Transmit chain: bits, OOK and DCO-OFDM waveforms, clipping, laser drive.

use num_complex::Complex64;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dsp::{self, UnitaryFft};
use crate::error::{Error, Result};
use crate::loading::LoadingPlan;
use crate::qam;
use crate::rng_from_seed;
use crate::waveform::{ElectricalWaveform, OpticalWaveform};

pub use crate::qam::qam_map;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OokConfig {
    /// Symbols (= bits) per second.
    pub symbol_rate: f64,
    pub rrc_rolloff: f64,
    pub samples_per_symbol: usize,
    pub rrc_span_symbols: usize,
}

impl Default for OokConfig {
    fn default() -> Self {
        Self {
            symbol_rate: 1e9,
            rrc_rolloff: 0.1,
            samples_per_symbol: 4,
            rrc_span_symbols: 64,
        }
    }
}

impl OokConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.symbol_rate > 0.0) {
            return Err(Error::Config("ook: symbol_rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.rrc_rolloff) {
            return Err(Error::Config("ook: rrc_rolloff must lie in [0, 1]".into()));
        }
        if self.samples_per_symbol < 2 {
            return Err(Error::Config("ook: samples_per_symbol must be at least 2".into()));
        }
        if self.rrc_span_symbols < 2 {
            return Err(Error::Config("ook: rrc_span_symbols must be at least 2".into()));
        }
        Ok(())
    }

    pub fn sample_rate(&self) -> f64 {
        self.symbol_rate * self.samples_per_symbol as f64
    }

    pub fn data_rate(&self) -> f64 {
        self.symbol_rate
    }

    pub fn pulse(&self) -> Vec<f64> {
        dsp::rrc_taps(self.rrc_rolloff, self.samples_per_symbol, self.rrc_span_symbols)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfdmConfig {
    pub fft_size: usize,
    /// Data subcarriers occupy bins 1..=n_data_subcarriers.
    pub n_data_subcarriers: usize,
    pub cp_length: usize,
    /// Sample rate of the OFDM time signal, hertz.
    pub modulation_bandwidth: f64,
    /// Clip level ε applied to the unit-variance time signal.
    pub clip_level: f64,
    /// Per-subcarrier constellation and energy; `None` means 4-QAM at unit energy.
    #[serde(skip)]
    pub loading: Option<LoadingPlan>,
}

impl Default for OfdmConfig {
    fn default() -> Self {
        Self {
            fft_size: 1024,
            n_data_subcarriers: 511,
            cp_length: 16,
            modulation_bandwidth: 1.4e9,
            clip_level: 3.5,
            loading: None,
        }
    }
}

impl OfdmConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.fft_size.is_power_of_two() || self.fft_size < 4 {
            return Err(Error::Config("ofdm: fft_size must be a power of two ≥ 4".into()));
        }
        if self.n_data_subcarriers == 0 || self.n_data_subcarriers > self.fft_size / 2 - 1 {
            return Err(Error::Config(format!(
                "ofdm: n_data_subcarriers must lie in 1..={}",
                self.fft_size / 2 - 1
            )));
        }
        if self.cp_length >= self.fft_size {
            return Err(Error::Config("ofdm: cp_length must be shorter than fft_size".into()));
        }
        if !(self.modulation_bandwidth > 0.0) {
            return Err(Error::Config("ofdm: modulation_bandwidth must be positive".into()));
        }
        if !(self.clip_level > 0.0) {
            return Err(Error::Config("ofdm: clip_level must be positive".into()));
        }
        if let Some(plan) = &self.loading {
            if plan.bits.len() != self.n_data_subcarriers || plan.energy.len() != self.n_data_subcarriers {
                return Err(Error::Config("ofdm: loading plan length differs from n_data_subcarriers".into()));
            }
        }
        Ok(())
    }

    pub fn block_len(&self) -> usize {
        self.fft_size + self.cp_length
    }

    pub fn subcarrier_spacing(&self) -> f64 {
        self.modulation_bandwidth / self.fft_size as f64
    }

    pub fn subcarrier_frequency(&self, data_index: usize) -> f64 {
        (data_index + 1) as f64 * self.subcarrier_spacing()
    }

    /// The active plan, or uniform 4-QAM.
    pub fn plan(&self) -> LoadingPlan {
        self.loading
            .clone()
            .unwrap_or_else(|| LoadingPlan::uniform(2, self.n_data_subcarriers, self))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriveConfig {
    /// Peak-to-peak AC drive, volts.
    pub vpp: f64,
    /// DC bias, volts.
    pub laser_bias: f64,
    /// Watts per volt above threshold.
    pub eo_slope: f64,
    pub eo_threshold: f64,
}

impl Default for DriveConfig {
    fn default() -> Self {
        Self {
            vpp: 0.8,
            laser_bias: 4.55,
            eo_slope: 1e-3,
            eo_threshold: 3.75,
        }
    }
}

impl DriveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.vpp > 0.0) {
            return Err(Error::Config("drive: vpp must be positive".into()));
        }
        if !(self.eo_slope > 0.0) {
            return Err(Error::Config("drive: eo_slope must be positive".into()));
        }
        if self.laser_bias - self.vpp / 2.0 < self.eo_threshold {
            return Err(Error::Config(format!(
                "drive: bias − vpp/2 = {:.3} V is below the laser threshold {:.3} V",
                self.laser_bias - self.vpp / 2.0,
                self.eo_threshold
            )));
        }
        Ok(())
    }
}

/// `n` equiprobable bits.
pub fn generate_bits(n: usize, seed: u64) -> Vec<u8> {
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let word: u64 = rng.random();
        let take = (n - out.len()).min(64);
        out.extend((0..take).map(|k| ((word >> k) & 1) as u8));
    }
    out
}

/// RRC-shaped ±1 OOK waveform. The output is the full convolution, so the
/// pulse peak of symbol `k` sits at sample `k * sps + (taps - 1) / 2`.
pub fn ook_modulate(bits: &[u8], cfg: &OokConfig) -> Result<ElectricalWaveform> {
    cfg.validate()?;
    if bits.is_empty() {
        return Err(Error::Framing("no bits to modulate".into()));
    }
    let sps = cfg.samples_per_symbol;
    let mut impulses = vec![0.0; bits.len() * sps];
    for (i, &b) in bits.iter().enumerate() {
        impulses[i * sps] = if b & 1 == 1 { 1.0 } else { -1.0 };
    }
    let h = cfg.pulse();
    Ok(ElectricalWaveform::new(cfg.sample_rate(), dsp::convolve(&impulses, &h)))
}

/// Maps one block of bits onto the data subcarriers according to `plan`,
/// scaling each symbol by the square root of its energy.
pub fn map_block(bits: &[u8], plan: &LoadingPlan) -> Result<Vec<Complex64>> {
    let need = plan.bits_per_block();
    if bits.len() != need {
        return Err(Error::Framing(format!("block needs {need} bits, got {}", bits.len())));
    }
    let mut pos = 0;
    plan.bits
        .iter()
        .zip(&plan.energy)
        .map(|(&b, &e)| {
            if b == 0 {
                return Ok(Complex64::new(0.0, 0.0));
            }
            let s = qam::map_symbol(&bits[pos..pos + b as usize])?;
            pos += b as usize;
            Ok(s * e.sqrt())
        })
        .collect()
}

/// Hermitian-symmetric IFFT plus cyclic prefix, with a cached transform.
#[derive(Debug, Clone)]
pub struct OfdmModulator {
    cfg: OfdmConfig,
    fft: UnitaryFft,
}

impl OfdmModulator {
    pub fn new(cfg: &OfdmConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg: cfg.clone(), fft: UnitaryFft::new(cfg.fft_size) })
    }

    pub fn config(&self) -> &OfdmConfig {
        &self.cfg
    }

    /// Frequency-domain vector for one block (all `fft_size` bins).
    pub fn spectrum(&self, symbols: &[Complex64]) -> Result<Vec<Complex64>> {
        let n = self.cfg.fft_size;
        if symbols.len() != self.cfg.n_data_subcarriers {
            return Err(Error::Framing(format!(
                "expected {} subcarrier symbols, got {}",
                self.cfg.n_data_subcarriers,
                symbols.len()
            )));
        }
        let mut bins = vec![Complex64::new(0.0, 0.0); n];
        for (k, &s) in symbols.iter().enumerate() {
            bins[k + 1] = s;
            bins[n - k - 1] = s.conj();
        }
        Ok(bins)
    }

    pub fn assemble(&self, symbols: &[Complex64]) -> Result<Vec<f64>> {
        let mut bins = self.spectrum(symbols)?;
        self.fft.inverse(&mut bins);
        let n = self.cfg.fft_size;
        let cp = self.cfg.cp_length;
        let mut out = Vec::with_capacity(n + cp);
        out.extend(bins[n - cp..].iter().map(|c| c.re));
        out.extend(bins.iter().map(|c| c.re));
        Ok(out)
    }
}

/// One DCO-OFDM block: symbols on bins 1..=n_data, mirrored conjugates,
/// unitary IFFT, cyclic prefix.
pub fn ofdm_assemble(symbols: &[Complex64], cfg: &OfdmConfig) -> Result<Vec<f64>> {
    OfdmModulator::new(cfg)?.assemble(symbols)
}

/// Result of [`clip_and_scale`].
#[derive(Debug, Clone)]
pub struct ClippedSignal {
    /// AC drive voltage.
    pub drive: ElectricalWaveform,
    /// The normalized signal after clipping, within [−ε, ε].
    pub normalized: Vec<f64>,
    pub clipped_fraction: f64,
}

/// Normalizes to zero mean and unit variance, clamps to [−ε, ε], then scales
/// by vpp/(2ε).
pub fn clip_and_scale(samples: &[f64], sample_rate: f64, eps: f64, drive: &DriveConfig) -> Result<ClippedSignal> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("clip level must be positive, got {eps}")));
    }
    let m = dsp::mean(samples);
    let sd = dsp::variance(samples).sqrt();
    if !(sd > 0.0) {
        return Err(Error::Degenerate("cannot normalize a zero-variance signal".into()));
    }
    let mut clipped = 0usize;
    let normalized: Vec<f64> = samples
        .iter()
        .map(|&v| {
            let z = (v - m) / sd;
            if z.abs() > eps {
                clipped += 1;
            }
            z.clamp(-eps, eps)
        })
        .collect();
    let k = drive.vpp / (2.0 * eps);
    let drive_wave = ElectricalWaveform::new(sample_rate, normalized.iter().map(|z| z * k).collect());
    Ok(ClippedSignal {
        drive: drive_wave,
        clipped_fraction: clipped as f64 / samples.len() as f64,
        normalized,
    })
}

/// Affine laser model followed by the channel attenuation. With
/// `target_rx_power` set, the trace is rescaled to that time-average.
pub fn electro_optic(
    drive_wave: &ElectricalWaveform,
    drive: &DriveConfig,
    attenuation: f64,
    target_rx_power: Option<f64>,
) -> Result<OpticalWaveform> {
    if !(attenuation > 0.0 && attenuation <= 1.0) {
        return Err(Error::Domain(format!("attenuation must lie in (0, 1], got {attenuation}")));
    }
    let mut p = Vec::with_capacity(drive_wave.len());
    for (i, &v) in drive_wave.samples.iter().enumerate() {
        let volts = drive.laser_bias + v;
        if volts < drive.eo_threshold {
            return Err(Error::BelowThreshold { index: i, voltage: volts, threshold: drive.eo_threshold });
        }
        p.push(drive.eo_slope * (volts - drive.eo_threshold) * attenuation);
    }
    if let Some(target) = target_rx_power {
        if !(target >= 0.0) {
            return Err(Error::Domain(format!("target power must be nonnegative, got {target}")));
        }
        let avg = dsp::mean(&p);
        if avg > 0.0 {
            let s = target / avg;
            p.iter_mut().for_each(|v| *v *= s);
        }
    }
    OpticalWaveform::new(drive_wave.sample_rate, p)
}
