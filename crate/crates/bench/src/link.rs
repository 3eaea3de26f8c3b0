//! One simulated frame end to end: drive waveform → laser → SPAD array →
//! front end → receiver DSP.
//!
//! Every frame starts and ends with a stretch of constant light so the
//! array's dead-time state settles before the preamble, followed by a slow
//! chip preamble for timing recovery.

use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use spadlink_core::dsp;
use spadlink_core::equalizer::{rls_train, EqualizerConfig, VolterraWeights};
use spadlink_core::loading::{estimate_snr, LoadingPlan, SnrProfile};
use spadlink_core::rx::{
    decide_and_count, equalize_aligned, matched_filter_downsample, synchronize, train_slicer, BerReport, Decision,
    OfdmDemodulator, Soft,
};
use spadlink_core::spad::{front_end, simulate_counts, FirstOrderLowpass, FrontEndConfig, SpadArrayConfig};
use spadlink_core::tx::{clip_and_scale, electro_optic, generate_bits, map_block, ook_modulate, DriveConfig, OfdmConfig, OfdmModulator, OokConfig};
use spadlink_core::{ElectricalWaveform, Error, OpticalWaveform, Result, Rng};

/// Frame layout and measurement lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    /// Constant light before the preamble and after the payload, seconds.
    pub guard_time: f64,
    pub preamble_chips: usize,
    /// Seconds per preamble chip.
    pub chip_time: f64,
    pub ook_training_symbols: usize,
    /// Payload symbols per OOK frame.
    pub ook_payload_symbols: usize,
    pub ofdm_training_blocks: usize,
    pub ofdm_pilot_blocks: usize,
    /// Payload blocks per OFDM frame.
    pub ofdm_payload_blocks: usize,
    /// Known 4-QAM blocks used to measure the per-subcarrier SNR.
    pub ofdm_probe_blocks: usize,
    /// Uniform bits per subcarrier for fixed-rate OFDM BER points.
    pub ofdm_bits: u32,
    /// Constant-light duration for bias-current points, seconds.
    pub bias_duration: f64,
    /// Floor on the Monte Carlo sample rate for bias-current points, hertz.
    pub bias_min_sample_rate: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            guard_time: 1e-6,
            preamble_chips: 128,
            chip_time: 1e-9,
            ook_training_symbols: 20_000,
            ook_payload_symbols: 100_000,
            ofdm_training_blocks: 16,
            ofdm_pilot_blocks: 16,
            ofdm_payload_blocks: 64,
            ofdm_probe_blocks: 64,
            ofdm_bits: 4,
            bias_duration: 1e-3,
            bias_min_sample_rate: 4e9,
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("link: {what}")));
        if !(self.guard_time >= 0.0 && self.guard_time.is_finite()) {
            return bad("guard_time must be finite and nonnegative");
        }
        if self.preamble_chips < 8 {
            return bad("preamble_chips must be at least 8");
        }
        if !(self.chip_time > 0.0) {
            return bad("chip_time must be positive");
        }
        if self.ook_training_symbols == 0 || self.ook_payload_symbols == 0 {
            return bad("OOK training and payload lengths must be positive");
        }
        if self.ofdm_training_blocks == 0 || self.ofdm_pilot_blocks == 0 || self.ofdm_payload_blocks == 0 {
            return bad("OFDM training, pilot and payload block counts must be positive");
        }
        if self.ofdm_probe_blocks < spadlink_core::loading::MIN_PILOTS_PER_SUBCARRIER {
            return bad("ofdm_probe_blocks must be at least 64");
        }
        if !spadlink_core::qam::SUPPORTED_BITS.contains(&self.ofdm_bits) {
            return bad("ofdm_bits must be one of 1, 2, 4, 6, 8, 10");
        }
        if !(self.bias_duration > 0.0) || !(self.bias_min_sample_rate > 0.0) {
            return bad("bias_duration and bias_min_sample_rate must be positive");
        }
        Ok(())
    }
}

/// Additive front-end noise and output scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontEndSection {
    /// RMS noise voltage inside the front-end 3-dB bandwidth. The noise is
    /// white, so its per-sample level scales with √(sample rate).
    pub awgn_sigma: f64,
    /// Transimpedance, volts per ampere of avalanche current.
    pub transimpedance: f64,
}

impl Default for FrontEndSection {
    fn default() -> Self {
        Self { awgn_sigma: 1e-3, transimpedance: 50.0 }
    }
}

impl FrontEndSection {
    pub fn validate(&self) -> Result<()> {
        if !(self.awgn_sigma >= 0.0 && self.awgn_sigma.is_finite()) {
            return Err(Error::Config("front_end: awgn_sigma must be finite and nonnegative".into()));
        }
        if !(self.transimpedance > 0.0) {
            return Err(Error::Config("front_end: transimpedance must be positive".into()));
        }
        Ok(())
    }
}

/// Everything the physical channel needs.
#[derive(Debug, Clone)]
pub struct Channel {
    pub spad: SpadArrayConfig,
    pub front_end: FrontEndSection,
    pub drive: DriveConfig,
}

/// Independent seeds for the stages of one frame.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut r = Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r.next_u64()
}

const STREAM_BITS: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_PILOT: u64 = 3;
const STREAM_COUNTS: u64 = 4;
const STREAM_NOISE: u64 = 5;
const PREAMBLE_SEED: u64 = 0x5E_ED0F_C41F;

impl Channel {
    pub fn validate(&self) -> Result<()> {
        self.spad.validate()?;
        self.front_end.validate()?;
        self.drive.validate()
    }

    /// Optical power at the receiver for a given drive voltage, relative to
    /// the average `p_r` delivered at zero AC drive.
    fn power_scale(&self, p_r: f64) -> f64 {
        p_r / (self.drive.eo_slope * (self.drive.laser_bias - self.drive.eo_threshold))
    }

    /// Sends `drive` (AC volts at `sample_rate`) through the link at mean
    /// received power `p_r` and returns the front-end output resampled back
    /// to `sample_rate`.
    pub fn propagate(&self, drive: &[f64], sample_rate: f64, p_r: f64, seed: u64) -> Result<Vec<f64>> {
        if !(p_r >= 0.0 && p_r.is_finite()) {
            return Err(Error::Domain(format!("received power must be finite and nonnegative, got {p_r}")));
        }
        if drive.is_empty() {
            return Err(Error::Framing("empty drive waveform".into()));
        }
        if self.power_scale(p_r) > 1.0 {
            return Err(Error::Domain(format!("received power {p_r} W exceeds the transmitted power")));
        }
        let d = &self.drive;
        let to_power = |v: f64| p_r * (d.laser_bias + v - d.eo_threshold) / (d.laser_bias - d.eo_threshold);
        // The oversampled drive stays inside the range of the DAC samples:
        // band-limited interpolation of clipped or sharp-edged drive rings
        // beyond it, which no physical DAC output does.
        let lo = drive.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = drive.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let up = ((self.spad.min_sample_rate(to_power(hi.max(0.0))) / sample_rate).ceil() as usize).max(1);
        let mut drive_up = dsp::interpolate(drive, up);
        drive_up.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
        let fs = sample_rate * up as f64;

        let optical = if p_r == 0.0 {
            OpticalWaveform::new(fs, vec![0.0; drive_up.len()])?
        } else {
            let atten = self.power_scale(p_r);
            electro_optic(&ElectricalWaveform::new(fs, drive_up), d, atten, None)?
        };
        let counts = simulate_counts(&optical, &self.spad, sub_seed(seed, STREAM_COUNTS))?;
        // volts per avalanche: R·Q/Δt turns counts per bin into a current
        let fe = FrontEndConfig {
            f3db: self.spad.f3db,
            awgn_sigma: self.front_end.awgn_sigma * (fs / (2.0 * self.spad.f3db)).sqrt(),
            gain: self.front_end.transimpedance * self.spad.recharge_charge * fs,
        };
        let out = front_end(&counts, &fe, sub_seed(seed, STREAM_NOISE));
        Ok(dsp::decimate(&out.samples, up))
    }
}

/// Removes the mean and scales to unit RMS; returns the removed mean.
fn ac_couple(x: &mut [f64]) -> f64 {
    let m = dsp::mean(x);
    x.iter_mut().for_each(|v| *v -= m);
    let rms = (dsp::energy(x) / x.len() as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
    m
}

/// Fixed ±1 chip pattern shared by every frame.
fn preamble_pattern(n: usize) -> Vec<f64> {
    generate_bits(n, PREAMBLE_SEED)
        .into_iter()
        .map(|b| if b == 1 { 1.0 } else { -1.0 })
        .collect()
}

/// Linearized response of the dead-time array to a small intensity change
/// around photon rate `lambda0`: a cell pool depleted by every count of the
/// last T_d, so δC[n] = δλ[n]/(1+x) − (x/D)·Σ_{k=1..D} δC[n−k] with
/// x = λ0·T_d/N and D the dead time in samples.
fn small_signal_response(x: &[f64], sample_rate: f64, lambda0: f64, spad: &SpadArrayConfig) -> Vec<f64> {
    let d = (spad.dead_time * sample_rate).round() as usize;
    let load = lambda0 * spad.dead_time / f64::from(spad.n_microcells);
    if d == 0 || load == 0.0 {
        return x.to_vec();
    }
    let k = load / d as f64;
    let live = 1.0 / (1.0 + load);
    let mut out = Vec::with_capacity(x.len());
    let mut window = 0.0;
    for (n, &v) in x.iter().enumerate() {
        let c = live * v - k * window;
        out.push(c);
        window += c;
        if n + 1 >= d {
            window -= out[n + 1 - d];
        }
    }
    out
}

/// Frame skeleton around a data section, all at one sample rate.
struct Framer {
    guard: usize,
    preamble: Vec<f64>,
    sample_rate: f64,
}

impl Framer {
    fn new(link: &LinkConfig, sample_rate: f64, amplitude: f64) -> Self {
        let chip = ((link.chip_time * sample_rate).round() as usize).max(1);
        let preamble: Vec<f64> = preamble_pattern(link.preamble_chips)
            .into_iter()
            .flat_map(|c| std::iter::repeat_n(c * amplitude, chip))
            .collect();
        Self { guard: (link.guard_time * sample_rate).round() as usize, preamble, sample_rate }
    }

    fn build(&self, data: &[f64], tail: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.guard];
        out.extend_from_slice(&self.preamble);
        out.extend_from_slice(data);
        out.extend(std::iter::repeat_n(0.0, tail + self.guard));
        out
    }

    /// Index of the first data sample in the received frame. The template is
    /// the preamble as the array and front end would reshape it at photon
    /// rate `lambda0`, which the receiver infers from the mean output level.
    fn locate(&self, rx: &[f64], lambda0: f64, spad: &SpadArrayConfig) -> Result<usize> {
        let shaped = small_signal_response(&self.preamble, self.sample_rate, lambda0, spad);
        let template = FirstOrderLowpass::new(spad.f3db, self.sample_rate).filter(shaped);
        let max_lag = self.guard + self.preamble.len();
        Ok(synchronize(rx, &template, Some(max_lag))? + self.preamble.len())
    }
}

impl Channel {
    /// Photon rate implied by a mean front-end output level, 1/s.
    fn photon_rate_from_level(&self, mean_volts: f64) -> f64 {
        let c = mean_volts / (self.front_end.transimpedance * self.spad.recharge_charge);
        let load = c * self.spad.dead_time / f64::from(self.spad.n_microcells);
        if c <= 0.0 {
            0.0
        } else if load >= 0.999 {
            c / 1e-3
        } else {
            c / (1.0 - load)
        }
    }

    /// Propagates a frame and returns it AC-coupled together with the index
    /// of its first data sample.
    fn receive(&self, framer: &Framer, tx: &[f64], p_r: f64, seed: u64) -> Result<(Vec<f64>, usize)> {
        let mut rx = self.propagate(tx, framer.sample_rate, p_r, seed)?;
        let level = ac_couple(&mut rx);
        let start = framer.locate(&rx, self.photon_rate_from_level(level), &self.spad)?;
        Ok((rx, start))
    }
}

/// Equalizer and slicer learned from one frame's training section.
#[derive(Debug, Clone)]
pub struct OokReceiver {
    pub weights: VolterraWeights,
    pub threshold: f64,
    pub training_mse: f64,
}

/// Result of one OOK frame.
#[derive(Debug, Clone)]
pub struct OokFrame {
    pub report: BerReport,
    pub receiver: OokReceiver,
}

/// Simulates one OOK frame: preamble, training symbols, payload. With
/// `trained` set the equalizer and slicer are reused instead of retrained.
#[allow(clippy::too_many_arguments)]
pub fn ook_frame(
    ch: &Channel,
    link: &LinkConfig,
    ook: &OokConfig,
    eq: &EqualizerConfig,
    p_r: f64,
    seed: u64,
    payload_symbols: usize,
    trained: Option<&OokReceiver>,
) -> Result<OokFrame> {
    if payload_symbols == 0 {
        return Err(Error::Framing("OOK frame needs at least one payload symbol".into()));
    }
    let n_train = link.ook_training_symbols;
    let n_pay = payload_symbols;
    let train_bits = generate_bits(n_train, sub_seed(seed, STREAM_TRAIN));
    let pay_bits = generate_bits(n_pay, sub_seed(seed, STREAM_BITS));
    let mut bits = train_bits.clone();
    bits.extend_from_slice(&pay_bits);

    let fs = ook.sample_rate();
    let half_swing = 0.5 * ch.drive.vpp;
    let wave = ook_modulate(&bits, ook)?;
    let data: Vec<f64> = wave.samples.iter().map(|v| v * half_swing).collect();
    let framer = Framer::new(link, fs, half_swing);
    let tx = framer.build(&data, 0);
    let (rx, start) = ch.receive(&framer, &tx, p_r, seed)?;
    let y = matched_filter_downsample(&rx, ook, start, bits.len())?;

    let receiver = match trained {
        Some(r) => r.clone(),
        None => {
            let reference: Vec<f64> = train_bits.iter().map(|&b| if b == 1 { 1.0 } else { -1.0 }).collect();
            let t = rls_train(&y, &reference, eq)?;
            let z = equalize_aligned(&y[..n_train + eq.delay()], &t.weights, eq.delay());
            let threshold = train_slicer(&z[..n_train], &train_bits)?;
            OokReceiver { training_mse: t.final_mse(), weights: t.weights, threshold }
        }
    };
    let z = equalize_aligned(&y, &receiver.weights, eq.delay());
    let report = decide_and_count(Soft::Samples(&z[n_train..]), &pay_bits, Decision::OokThreshold(receiver.threshold))?;
    Ok(OokFrame { report, receiver })
}

/// Random unit-energy 4-QAM blocks.
fn qpsk_blocks(n_blocks: usize, n_sub: usize, seed: u64) -> Vec<Vec<Complex64>> {
    let plan = LoadingPlan { bits: vec![2; n_sub], energy: vec![1.0; n_sub], total_rate: 0.0 };
    let bits = generate_bits(n_blocks * 2 * n_sub, seed);
    bits.chunks(2 * n_sub).map(|b| map_block(b, &plan).expect("block length matches plan")).collect()
}

/// What the OFDM payload section carries.
#[derive(Debug, Clone, Copy)]
pub enum OfdmPayload<'a> {
    /// Known 4-QAM blocks; the frame reports the per-subcarrier SNR.
    Probe { blocks: usize },
    /// Data mapped with a loading plan; the frame reports BER.
    Data { plan: &'a LoadingPlan, blocks: usize },
}

/// Result of one OFDM frame.
#[derive(Debug, Clone)]
pub struct OfdmFrame {
    pub report: Option<BerReport>,
    pub snr: Option<SnrProfile>,
    pub clipped_fraction: f64,
    pub weights: VolterraWeights,
    /// Final training MSE, or `None` when the equalizer was reused.
    pub training_mse: Option<f64>,
}

/// Simulates one DCO-OFDM frame: preamble, equalizer training blocks (only
/// when `trained` is `None`), pilot blocks for the single-tap FDE, payload.
#[allow(clippy::too_many_arguments)]
pub fn ofdm_frame(
    ch: &Channel,
    link: &LinkConfig,
    ofdm: &OfdmConfig,
    eq: &EqualizerConfig,
    p_r: f64,
    seed: u64,
    payload: OfdmPayload<'_>,
    trained: Option<&VolterraWeights>,
) -> Result<OfdmFrame> {
    let n_sub = ofdm.n_data_subcarriers;
    let modem = OfdmModulator::new(ofdm)?;
    let n_train = if trained.is_some() { 0 } else { link.ofdm_training_blocks };
    let train = qpsk_blocks(n_train, n_sub, sub_seed(seed, STREAM_TRAIN));
    let pilots = qpsk_blocks(link.ofdm_pilot_blocks, n_sub, sub_seed(seed, STREAM_PILOT));
    let (symbols, pay_bits, plan) = match payload {
        OfdmPayload::Probe { blocks } => (qpsk_blocks(blocks, n_sub, sub_seed(seed, STREAM_BITS)), Vec::new(), None),
        OfdmPayload::Data { plan, blocks } => {
            let per = plan.bits_per_block();
            if per == 0 {
                return Err(Error::Degenerate("loading plan carries no bits".into()));
            }
            let bits = generate_bits(per * blocks, sub_seed(seed, STREAM_BITS));
            let mapped = bits.chunks(per).map(|b| map_block(b, plan)).collect::<Result<Vec<_>>>()?;
            (mapped, bits, Some(plan))
        }
    };
    if symbols.is_empty() {
        return Err(Error::Framing("OFDM frame needs at least one payload block".into()));
    }

    let mut time = Vec::with_capacity((train.len() + pilots.len() + symbols.len()) * ofdm.block_len());
    for b in train.iter().chain(&pilots).chain(&symbols) {
        time.extend(modem.assemble(b)?);
    }
    let fs = ofdm.modulation_bandwidth;
    let clipped = clip_and_scale(&time, fs, ofdm.clip_level, &ch.drive)?;
    let framer = Framer::new(link, fs, 0.5 * ch.drive.vpp);
    let tail = eq.n_linear;
    let tx = framer.build(&clipped.drive.samples, tail);
    let (rx, start) = ch.receive(&framer, &tx, p_r, seed)?;
    let x = &rx[start..start + time.len() + tail];

    let bl = ofdm.block_len();
    let train_len = train.len() * bl;
    let (weights, training_mse) = match trained {
        Some(w) => (w.clone(), None),
        None => {
            let t = rls_train(x, &clipped.normalized[..train_len], eq)?;
            let mse = t.final_mse();
            (t.weights, Some(mse))
        }
    };
    let z = equalize_aligned(x, &weights, eq.delay());

    let demod = OfdmDemodulator::new(ofdm)?;
    let raw_pilots = demod.raw_blocks(&z, train_len, pilots.len())?;
    let channel = demod.estimate_channel(&raw_pilots, &pilots)?;
    let raw = demod.raw_blocks(&z, train_len + pilots.len() * bl, symbols.len())?;
    let active: Vec<bool> = match plan {
        Some(p) => p.bits.iter().map(|&b| b > 0).collect(),
        None => vec![true; n_sub],
    };
    let eq_blocks = demod.equalize(raw, &channel, &active)?;

    let (report, snr) = match plan {
        None => (None, Some(estimate_snr(&eq_blocks, &symbols)?)),
        Some(p) => (Some(decide_and_count(Soft::Blocks(&eq_blocks), &pay_bits, Decision::Qam(p))?), None),
    };
    Ok(OfdmFrame { report, snr, clipped_fraction: clipped.clipped_fraction, weights, training_mse })
}

/// Monte Carlo bias current for constant illumination, amperes.
pub fn bias_point(spad: &SpadArrayConfig, link: &LinkConfig, p_r: f64, seed: u64) -> Result<(f64, u64)> {
    let fs = (1.25 * spad.min_sample_rate(p_r)).max(link.bias_min_sample_rate);
    let light = OpticalWaveform::constant(p_r, fs, link.bias_duration)?;
    let counts = simulate_counts(&light, spad, seed)?;
    let total = counts.total();
    Ok((spad.recharge_charge * total as f64 / light.duration(), total))
}

