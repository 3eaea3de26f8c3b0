//! Operating points, rate searches and the scenario sweeps.
//!
//! Seeding: operating point `i` of a scenario gets
//! `master_seed + h(scenario, i)` (wrapping), where `h` is the first eight
//! bytes, little-endian, of SHA-256 over `"<scenario>:<i>"`. Receiver and
//! modulation variants evaluated at the same point share its seed. Frames,
//! rate candidates and probes inside a point draw further seeds from it with
//! fixed stream numbers, so results never depend on execution order.

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use spadlink_core::equalizer::{EqualizerConfig, EqualizerMode, VolterraWeights};
use spadlink_core::loading::{load_bits_energy, LoadingOptions, LoadingPlan, SnrProfile};
use spadlink_core::rx::BerReport;
use spadlink_core::spad::bias_current;
use spadlink_core::tx::{OfdmConfig, OokConfig};
use spadlink_core::Error;

use crate::config::{equalizer_name, ExperimentConfig, Modulation, Scenario};
use crate::link::{bias_point, ofdm_frame, ook_frame, sub_seed, Channel, OfdmPayload, OokReceiver};
use crate::report::{Cell, SweepResult, Table};

/// Human-readable description of the seed derivation, copied into manifests.
pub const SEED_SCHEME: &str = "point seed = master_seed + u64_le(SHA-256(\"<scenario>:<point index>\")[0..8]) \
(wrapping); points are enumerated power-major in grid order; all receiver and modulation variants of a point \
share its seed";

const STREAM_FRAME: u64 = 0x100;
const STREAM_RATE: u64 = 0x1_0000;
const STREAM_REFINE: u64 = 0x2_0000;
const STREAM_PROBE: u64 = 0x3_0000;
const STREAM_CONFIRM: u64 = 0x3_1000;

/// Retries of an OFDM confirmation run, each with 0.5 dB more margin.
pub const MAX_MARGIN_RETRIES: u32 = 5;
pub const MARGIN_STEP_DB: f64 = 0.5;

/// Reported SNRs are floored at −120 dB so the CSV never holds −inf.
const SNR_FLOOR: f64 = 1e-12;

pub fn point_seed(master_seed: u64, scenario: Scenario, index: usize) -> u64 {
    let digest = Sha256::digest(format!("{}:{index}", scenario.name()).as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    master_seed.wrapping_add(u64::from_le_bytes(head))
}

/// A simulation failure together with the operating point that raised it.
#[derive(Debug, thiserror::Error)]
#[error("{point}: {source}")]
pub struct SimError {
    pub point: String,
    #[source]
    pub source: Error,
}

fn at<T>(r: Result<T, Error>, point: impl FnOnce() -> String) -> Result<T, SimError> {
    r.map_err(|source| SimError { point: point(), source })
}

/// One operating point of a BER sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub modulation: Modulation,
    pub equalizer: EqualizerMode,
    /// Received optical power, watts.
    pub power: f64,
    /// Bits per second.
    pub rate: f64,
    /// Clip level; ignored for OOK.
    pub clip_level: f64,
}

impl Point {
    fn describe(&self) -> String {
        format!(
            "{} {} at {} W, {} bit/s, clip {}",
            self.modulation.name(),
            equalizer_name(self.equalizer),
            self.power,
            self.rate,
            self.clip_level
        )
    }
}

/// Everything a measurement needs, resolved once from the configuration.
pub struct Harness<'a> {
    pub cfg: &'a ExperimentConfig,
    pub channel: Channel,
}

impl<'a> Harness<'a> {
    pub fn new(cfg: &'a ExperimentConfig) -> Self {
        Self { cfg, channel: cfg.channel() }
    }

    fn eq(&self, mode: EqualizerMode) -> EqualizerConfig {
        self.cfg.equalizer_for(mode)
    }

    /// Bits a feasibility decision may spend: enough to see `min_errors`
    /// errors ten times over at the target BER, capped by `max_bits`.
    pub fn decision_bits(&self) -> u64 {
        let x = &self.cfg.experiment;
        let enough = (10.0 * x.min_errors as f64 / x.target_ber).ceil() as u64;
        enough.min(x.max_bits)
    }

    /// OFDM parameters for a uniform constellation at a given bit rate.
    pub fn fixed_rate_ofdm(&self, rate: f64, clip_level: f64) -> OfdmConfig {
        let o = &self.cfg.ofdm;
        let bits = f64::from(self.cfg.link.ofdm_bits);
        let bandwidth = rate * o.block_len() as f64 / (bits * o.n_data_subcarriers as f64);
        OfdmConfig { modulation_bandwidth: bandwidth, clip_level, loading: None, ..o.clone() }
    }

    /// Simulates frames at one point until `min_errors` errors or
    /// `budget` bits, whichever comes first.
    pub fn run_point(&self, p: &Point, seed: u64, budget: u64) -> Result<BerReport, SimError> {
        let eq = self.eq(p.equalizer);
        match p.modulation {
            Modulation::Ook => {
                let ook = OokConfig { symbol_rate: p.rate, ..self.cfg.ook };
                let mut rx: Option<OokReceiver> = None;
                let r = self.measure(budget, |f, remaining| {
                    let n = (self.cfg.link.ook_payload_symbols as u64).min(remaining) as usize;
                    let frame = ook_frame(&self.channel, &self.cfg.link, &ook, &eq, p.power, frame_seed(seed, f), n, rx.as_ref())?;
                    rx.get_or_insert(frame.receiver);
                    Ok(frame.report)
                });
                at(r, || p.describe())
            }
            Modulation::DcoOfdm => {
                let ofdm = self.fixed_rate_ofdm(p.rate, p.clip_level);
                let plan = LoadingPlan::uniform(self.cfg.link.ofdm_bits, ofdm.n_data_subcarriers, &ofdm);
                at(self.run_plan(&ofdm, &eq, &plan, p.power, seed, budget, None), || p.describe())
            }
        }
    }

    /// Frames loop shared by every measurement.
    fn measure(
        &self,
        budget: u64,
        mut frame: impl FnMut(usize, u64) -> Result<BerReport, Error>,
    ) -> Result<BerReport, Error> {
        let min_errors = self.cfg.experiment.min_errors;
        let mut total = BerReport::default();
        let mut f = 0;
        while total.bit_errors < min_errors && total.bits_compared < budget {
            let r = frame(f, budget - total.bits_compared)?;
            if r.bits_compared == 0 {
                return Err(Error::Framing("frame compared no bits".into()));
            }
            total.merge(&r);
            f += 1;
        }
        Ok(total)
    }

    /// BER of OFDM frames carrying `plan`. The equalizer is trained on the
    /// first frame unless `weights` is given.
    #[allow(clippy::too_many_arguments)]
    fn run_plan(
        &self,
        ofdm: &OfdmConfig,
        eq: &EqualizerConfig,
        plan: &LoadingPlan,
        power: f64,
        seed: u64,
        budget: u64,
        weights: Option<&VolterraWeights>,
    ) -> Result<BerReport, Error> {
        let per_block = plan.bits_per_block() as u64;
        if per_block == 0 {
            return Err(Error::Degenerate("loading plan carries no bits".into()));
        }
        let mut w = weights.cloned();
        self.measure(budget, |f, remaining| {
            let blocks = (self.cfg.link.ofdm_payload_blocks as u64).min(remaining.div_ceil(per_block)) as usize;
            let payload = OfdmPayload::Data { plan, blocks };
            let frame = ofdm_frame(&self.channel, &self.cfg.link, ofdm, eq, power, frame_seed(seed, f), payload, w.as_ref())?;
            if w.is_none() {
                w = Some(frame.weights);
            }
            frame.report.ok_or_else(|| Error::Framing("data frame returned no BER".into()))
        })
    }

    /// Highest OOK grid rate meeting the target, refined once toward the
    /// next grid rate.
    pub fn ook_achievable_rate(&self, mode: EqualizerMode, power: f64, seed: u64) -> Result<RateResult, SimError> {
        if !(power > 0.0) {
            return Ok(RateResult::infeasible());
        }
        let x = &self.cfg.experiment;
        let mut rates = x.rate_grid.clone();
        rates.sort_by(f64::total_cmp);
        rates.dedup();
        let budget = self.decision_bits();
        let evaluate = |rate: f64, s: u64| -> Result<Option<BerReport>, SimError> {
            let p = Point { modulation: Modulation::Ook, equalizer: mode, power, rate, clip_level: 0.0 };
            match self.run_point(&p, s, budget) {
                Ok(r) => Ok(Some(r)),
                Err(SimError { source: Error::SyncFailure { .. }, .. }) => Ok(None),
                Err(e) => Err(e),
            }
        };
        let meets = |r: &Option<BerReport>| r.is_some_and(|r| r.ber() <= x.target_ber);

        let mut best: Option<(usize, BerReport)> = None;
        for (i, &rate) in rates.iter().enumerate() {
            let r = evaluate(rate, sub_seed(seed, STREAM_RATE + i as u64))?;
            if meets(&r) {
                best = Some((i, r.unwrap()));
            }
        }
        let Some((i, report)) = best else {
            return Ok(RateResult::infeasible());
        };
        let mut out = RateResult { rate: rates[i], report, feasible: true, clip_level: 0.0, margin_db: 0.0, plan: None, snr: None };
        if let Some(&next) = rates.get(i + 1) {
            let mid = 0.5 * (rates[i] + next);
            let r = evaluate(mid, sub_seed(seed, STREAM_REFINE + i as u64))?;
            if meets(&r) {
                out.rate = mid;
                out.report = r.unwrap();
            }
        }
        Ok(out)
    }

    /// Loads bits on the measured SNR profile at clip level `clip_level` and
    /// confirms the plan, adding margin until the confirmation passes.
    pub fn ofdm_achievable_rate(
        &self,
        mode: EqualizerMode,
        power: f64,
        clip_level: f64,
        seed: u64,
    ) -> Result<RateResult, SimError> {
        let mut out = RateResult { clip_level, ..RateResult::infeasible() };
        if !(power > 0.0) {
            return Ok(out);
        }
        let x = &self.cfg.experiment;
        let eq = self.eq(mode);
        let ofdm = OfdmConfig { clip_level, loading: None, ..self.cfg.ofdm.clone() };
        let describe = || format!("dco-ofdm {} rate search at {power} W, clip {clip_level}", equalizer_name(mode));
        let probe = OfdmPayload::Probe { blocks: self.cfg.link.ofdm_probe_blocks };
        let frame = match ofdm_frame(&self.channel, &self.cfg.link, &ofdm, &eq, power, sub_seed(seed, STREAM_PROBE), probe, None) {
            Ok(f) => f,
            Err(Error::SyncFailure { .. }) => return Ok(out),
            Err(e) => return Err(SimError { point: describe(), source: e }),
        };
        let snr = frame.snr.expect("probe frames report SNR");
        out.snr = Some(snr.clone());

        let confirm_limit = 1.5 * x.target_ber;
        for attempt in 0..=MAX_MARGIN_RETRIES {
            let margin_db = MARGIN_STEP_DB * f64::from(attempt);
            let opts = LoadingOptions { margin_db, ..LoadingOptions::default() };
            let plan = at(load_bits_energy(&snr, x.target_ber, &ofdm, &opts), describe)?;
            if plan.active() == 0 {
                break;
            }
            let s = sub_seed(seed, STREAM_CONFIRM + u64::from(attempt));
            let report = match self.run_plan(&ofdm, &eq, &plan, power, s, self.decision_bits(), Some(&frame.weights)) {
                Ok(r) => r,
                Err(Error::SyncFailure { .. }) => break,
                Err(e) => return Err(SimError { point: describe(), source: e }),
            };
            out.margin_db = margin_db;
            out.report = report;
            if report.ber() <= confirm_limit {
                out.rate = plan.total_rate;
                out.feasible = true;
                out.plan = Some(plan);
                return Ok(out);
            }
        }
        Ok(out)
    }

    /// Rate at every clip level of the grid and the best of them; ties go
    /// to the smaller clip level. All levels share `seed`.
    pub fn optimize_clipping(
        &self,
        mode: EqualizerMode,
        power: f64,
        seed: u64,
    ) -> Result<(RateResult, Vec<RateResult>), SimError> {
        let mut grid = self.cfg.experiment.clip_grid.clone();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let all = grid
            .par_iter()
            .map(|&eps| self.ofdm_achievable_rate(mode, power, eps, seed))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((best_clip(&all).clone(), all))
    }
}

/// Argmax of rate, first (smallest clip level) on ties. `all` must be
/// sorted by clip level and nonempty.
pub fn best_clip(all: &[RateResult]) -> &RateResult {
    let mut best = &all[0];
    for r in &all[1..] {
        if r.rate > best.rate {
            best = r;
        }
    }
    best
}

fn frame_seed(seed: u64, frame: usize) -> u64 {
    sub_seed(seed, STREAM_FRAME + frame as u64)
}

/// Outcome of an achievable-rate search.
#[derive(Debug, Clone, PartialEq)]
pub struct RateResult {
    /// Bits per second; 0 when nothing met the target.
    pub rate: f64,
    /// BER measured at the reported rate (or at the last attempt).
    pub report: BerReport,
    pub feasible: bool,
    pub clip_level: f64,
    pub margin_db: f64,
    pub plan: Option<LoadingPlan>,
    pub snr: Option<SnrProfile>,
}

impl RateResult {
    fn infeasible() -> Self {
        Self {
            rate: 0.0,
            report: BerReport::default(),
            feasible: false,
            clip_level: 0.0,
            margin_db: 0.0,
            plan: None,
            snr: None,
        }
    }
}

/// Runs the configured scenario on `workers` threads.
pub fn run_scenario(cfg: &ExperimentConfig, workers: usize) -> Result<SweepResult, SimError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| {
        let h = Harness::new(cfg);
        match cfg.experiment.scenario {
            Scenario::BiasCurve => bias_curve(&h),
            Scenario::BerVsPower | Scenario::BerVsRate => ber_sweep(&h),
            Scenario::ClippingSweep => clipping_sweep(&h),
            Scenario::RateVsPower => rate_vs_power(&h),
            Scenario::SnrBitsReport => snr_bits_report(&h),
        }
    })
}

fn seed_of(h: &Harness<'_>, index: usize) -> u64 {
    point_seed(h.cfg.experiment.master_seed, h.cfg.experiment.scenario, index)
}

fn bias_curve(h: &Harness<'_>) -> Result<SweepResult, SimError> {
    let grid = &h.cfg.experiment.power_grid;
    let rows = grid
        .par_iter()
        .enumerate()
        .map(|(i, &p)| {
            let seed = seed_of(h, i);
            let describe = || format!("bias point at {p} W");
            let (current, counts) = at(bias_point(&h.cfg.spad, &h.cfg.link, p, seed), describe)?;
            let model = at(bias_current(p, &h.cfg.spad), describe)?;
            Ok(vec![
                Cell::Num(p),
                Cell::Num(current),
                Cell::Num(model),
                Cell::Num((current - model) / model),
                Cell::Int(counts),
                Cell::Int(seed),
            ])
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    let table = Table::new(
        &["power_w", "bias_current_a", "model_current_a", "relative_error", "counts", "seed"],
        &[0],
        rows,
    );
    Ok(SweepResult::single(h.cfg.experiment.scenario, table))
}

fn ber_sweep(h: &Harness<'_>) -> Result<SweepResult, SimError> {
    let x = &h.cfg.experiment;
    let mut jobs = Vec::new();
    for (pi, &power) in x.power_grid.iter().enumerate() {
        for (ri, &rate) in x.rate_grid.iter().enumerate() {
            let index = pi * x.rate_grid.len() + ri;
            for &modulation in &x.modulations {
                for &equalizer in &x.equalizers {
                    let clip_level = if modulation == Modulation::Ook { 0.0 } else { h.cfg.ofdm.clip_level };
                    jobs.push((index, Point { modulation, equalizer, power, rate, clip_level }));
                }
            }
        }
    }
    let rows = jobs
        .par_iter()
        .map(|(index, p)| {
            let seed = seed_of(h, *index);
            let r = h.run_point(p, seed, x.max_bits)?;
            Ok(vec![
                Cell::text(p.modulation.name()),
                Cell::text(equalizer_name(p.equalizer)),
                Cell::Num(p.power),
                Cell::Num(p.rate),
                Cell::Num(p.clip_level),
                Cell::Num(r.ber()),
                Cell::Num(r.std_error()),
                Cell::Int(r.bits_compared),
                Cell::Int(r.bit_errors),
                Cell::Int(seed),
            ])
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    let key: &[usize] = if x.scenario == Scenario::BerVsRate { &[0, 1, 3, 2] } else { &[0, 1, 2, 3] };
    let table = Table::new(
        &["modulation", "equalizer", "power_w", "rate_bps", "clip_level", "ber", "std_error", "bits", "errors", "seed"],
        key,
        rows,
    );
    Ok(SweepResult::single(x.scenario, table))
}

fn clipping_sweep(h: &Harness<'_>) -> Result<SweepResult, SimError> {
    let x = &h.cfg.experiment;
    let mode = x.equalizers[0];
    let jobs: Vec<(usize, f64, f64)> = x
        .power_grid
        .iter()
        .enumerate()
        .flat_map(|(i, &p)| x.clip_grid.iter().map(move |&eps| (i, p, eps)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(i, p, eps)| {
            let seed = seed_of(h, i);
            let r = h.ofdm_achievable_rate(mode, p, eps, seed)?;
            Ok(vec![
                Cell::Num(p),
                Cell::Num(eps),
                Cell::Num(r.rate),
                Cell::Num(r.report.ber()),
                Cell::Int(r.report.bits_compared),
                Cell::Int(r.report.bit_errors),
                Cell::Int(seed),
            ])
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    let table = Table::new(&["power_w", "clip_level", "rate_bps", "ber", "bits", "errors", "seed"], &[0, 1], rows);
    Ok(SweepResult::single(x.scenario, table))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Variant {
    Ook,
    OfdmFixed,
    OfdmOptimized,
}

fn rate_vs_power(h: &Harness<'_>) -> Result<SweepResult, SimError> {
    let x = &h.cfg.experiment;
    let mut jobs = Vec::new();
    for (i, &power) in x.power_grid.iter().enumerate() {
        for &m in &x.modulations {
            for &eq in &x.equalizers {
                match m {
                    Modulation::Ook => jobs.push((i, power, eq, Variant::Ook)),
                    Modulation::DcoOfdm => {
                        jobs.push((i, power, eq, Variant::OfdmFixed));
                        if x.optimize_clipping {
                            jobs.push((i, power, eq, Variant::OfdmOptimized));
                        }
                    }
                }
            }
        }
    }
    let rows = jobs
        .par_iter()
        .map(|&(i, power, eq, variant)| {
            let seed = seed_of(h, i);
            let (r, modulation, clipping) = match variant {
                Variant::Ook => (h.ook_achievable_rate(eq, power, seed)?, Modulation::Ook, "none"),
                Variant::OfdmFixed => {
                    (h.ofdm_achievable_rate(eq, power, h.cfg.ofdm.clip_level, seed)?, Modulation::DcoOfdm, "fixed")
                }
                Variant::OfdmOptimized => (h.optimize_clipping(eq, power, seed)?.0, Modulation::DcoOfdm, "optimized"),
            };
            Ok(vec![
                Cell::text(modulation.name()),
                Cell::text(equalizer_name(eq)),
                Cell::text(clipping),
                Cell::Num(power),
                Cell::Num(r.clip_level),
                Cell::Num(r.rate),
                Cell::Num(r.report.ber()),
                Cell::Int(r.report.bits_compared),
                Cell::Int(r.report.bit_errors),
                Cell::Num(r.margin_db),
                Cell::Bool(r.feasible),
                Cell::Int(seed),
            ])
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    let table = Table::new(
        &[
            "modulation", "equalizer", "clipping", "power_w", "clip_level", "rate_bps", "ber", "bits", "errors",
            "margin_db", "feasible", "seed",
        ],
        &[0, 1, 2, 3],
        rows,
    );
    Ok(SweepResult::single(x.scenario, table))
}

fn snr_bits_report(h: &Harness<'_>) -> Result<SweepResult, SimError> {
    let x = &h.cfg.experiment;
    let mode = x.equalizers[0];
    let results = x
        .power_grid
        .par_iter()
        .enumerate()
        .map(|(i, &p)| {
            let seed = seed_of(h, i);
            let r = if x.optimize_clipping {
                h.optimize_clipping(mode, p, seed)?.0
            } else {
                h.ofdm_achievable_rate(mode, p, h.cfg.ofdm.clip_level, seed)?
            };
            Ok((p, seed, r))
        })
        .collect::<Result<Vec<_>, SimError>>()?;

    let mut main = Vec::new();
    let mut sub = Vec::new();
    for (p, seed, r) in &results {
        let active = r.plan.as_ref().map_or(0, |pl| pl.active());
        main.push(vec![
            Cell::Num(*p),
            Cell::Num(r.clip_level),
            Cell::Num(r.rate),
            Cell::Num(r.report.ber()),
            Cell::Int(r.report.bits_compared),
            Cell::Int(r.report.bit_errors),
            Cell::Int(active as u64),
            Cell::Num(r.margin_db),
            Cell::Bool(r.feasible),
            Cell::Int(*seed),
        ]);
        if let Some(snr) = &r.snr {
            let ofdm = &h.cfg.ofdm;
            for (k, &lin) in snr.snr.iter().enumerate() {
                let (bits, energy) = r.plan.as_ref().map_or((0, 0.0), |pl| (pl.bits[k], pl.energy[k]));
                sub.push(vec![
                    Cell::Num(*p),
                    Cell::Int(k as u64 + 1),
                    Cell::Num(ofdm.subcarrier_frequency(k)),
                    Cell::Num(10.0 * lin.max(SNR_FLOOR).log10()),
                    Cell::Int(u64::from(bits)),
                    Cell::Num(energy),
                ]);
            }
        }
    }
    let main = Table::new(
        &["power_w", "clip_level", "rate_bps", "ber", "bits", "errors", "active_subcarriers", "margin_db", "feasible", "seed"],
        &[0],
        main,
    );
    let sub = Table::new(&["power_w", "index", "frequency_hz", "snr_db", "bits", "energy"], &[0, 1], sub);
    let mut out = SweepResult::single(x.scenario, main);
    out.tables.push(("subcarriers".to_string(), sub));
    Ok(out)
}
