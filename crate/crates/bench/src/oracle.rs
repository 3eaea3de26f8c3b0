//! Quick self-checks of the simulator against closed forms and brute force,
//! run by `spadlink oracle`.

use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, Normal};
use statrs::function::erf::erfc;

use spadlink_core::equalizer::{rls_train, volterra_apply, EqualizerConfig, EqualizerMode, VolterraWeights};
use spadlink_core::loading::{load_bits_energy, snr_gap, LoadingOptions, SnrProfile};
use spadlink_core::rx::{decide_and_count, Decision, Soft};
use spadlink_core::spad::{bias_current, front_end, saturation_limit, CountSignal, FrontEndConfig, SpadArrayConfig};
use spadlink_core::tx::{generate_bits, OfdmConfig};
use spadlink_core::Rng;

use crate::link::{bias_point, LinkConfig};

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Runs every check; takes a few seconds.
pub fn run_all() -> Vec<Check> {
    vec![
        saturation_law(),
        front_end_corner(),
        volterra_brute_force(),
        rls_identity(),
        bpsk_awgn(),
        loading_gap(),
    ]
}

fn saturation_law() -> Check {
    let spad = SpadArrayConfig::default();
    let link = LinkConfig { bias_duration: 1e-4, ..LinkConfig::default() };
    let mut worst: f64 = 0.0;
    for (i, p) in [1e-8, 1e-6, 5e-5].into_iter().enumerate() {
        let (mc, _) = bias_point(&spad, &link, p, i as u64).expect("valid bias point");
        let model = bias_current(p, &spad).expect("valid power");
        worst = worst.max((mc / model - 1.0).abs());
    }
    let plateau = spad.recharge_charge * saturation_limit(&spad);
    let expected = 0.14e-12 * 14410.0 / 66e-9;
    let plateau_err = (plateau / expected - 1.0).abs();
    check(
        "bias current follows the saturation law",
        worst < 0.02 && plateau_err < 0.01,
        format!("worst relative error {worst:.2e}, plateau {:.3} mA", plateau * 1e3),
    )
}

/// Gain of the simulated front end for a count-rate tone at `f`.
fn tone_gain(f: f64) -> f64 {
    let fs = 8e9;
    let n = 64_000;
    let counts: Vec<u32> = (0..n)
        .map(|k| (100_000.0 + 50_000.0 * (2.0 * std::f64::consts::PI * f * k as f64 / fs).sin()).round() as u32)
        .collect();
    let fe = FrontEndConfig { f3db: SpadArrayConfig::default().f3db, awgn_sigma: 0.0, gain: 1.0 };
    let y = front_end(&CountSignal { bin_width: 1.0 / fs, counts }, &fe, 0);
    let tail = &y.samples[n / 2..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    (2.0 * tail.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / tail.len() as f64).sqrt() / 50_000.0
}

fn front_end_corner() -> Check {
    let target = std::f64::consts::FRAC_1_SQRT_2;
    let (mut lo, mut hi) = (50e6, 1e9);
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if tone_gain(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let f = 0.5 * (lo + hi);
    check("front end 3-dB point", (f / 250e6 - 1.0).abs() < 0.01, format!("{:.2} MHz", f / 1e6))
}

fn brute_force(x: &[f64], w: &VolterraWeights) -> Vec<f64> {
    let at = |k: isize| if k < 0 { 0.0 } else { x[k as usize] };
    (0..x.len() as isize)
        .map(|n| {
            let mut d = 0.0;
            for (i, w1) in w.w1.iter().enumerate() {
                d += w1 * at(n - i as isize);
            }
            for m1 in 0..w.n_nonlinear() {
                for m2 in m1..w.n_nonlinear() {
                    d += w.w2(m1, m2) * at(n - m1 as isize) * at(n - m2 as isize);
                }
            }
            d
        })
        .collect()
}

fn volterra_brute_force() -> Check {
    let mut rng = Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let (nl, nq) = if i % 10 == 0 {
            (41, 21)
        } else {
            let nl = rng.random_range(1..=41);
            (nl, rng.random_range(0..=nl))
        };
        let mut w = VolterraWeights::zeros(nl, nq);
        w.w1.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        for m1 in 0..nq {
            for m2 in m1..nq {
                w.set_w2(m1, m2, rng.random_range(-0.5..0.5));
            }
        }
        let x: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (fast, slow) = (volterra_apply(&x, &w), brute_force(&x, &w));
        let scale = slow.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let err = fast.iter().zip(&slow).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale;
        worst = worst.max(err);
    }
    check("Volterra output equals the double sum", worst <= 1e-12, format!("worst relative error {worst:.1e}"))
}

fn rls_identity() -> Check {
    let cfg = EqualizerConfig { mode: EqualizerMode::Volterra, rls_forgetting: 1.0, ..EqualizerConfig::default() };
    let mut rng = Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..10 * cfg.total_taps() + 200).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mse = rls_train(&x, &x, &cfg).map(|t| t.final_mse()).unwrap_or(f64::INFINITY);
    check("RLS learns the identity channel", mse < 1e-6, format!("training MSE {mse:.1e}"))
}

fn bpsk_awgn() -> Check {
    let n = 2_000_000;
    let mut worst: f64 = 0.0;
    for (i, ebn0_db) in [4.0, 8.0, 9.6f64].into_iter().enumerate() {
        let ebn0 = 10f64.powf(ebn0_db / 10.0);
        let noise = Normal::new(0.0, (0.5 / ebn0).sqrt()).expect("finite sigma");
        let bits = generate_bits(n, 100 + i as u64);
        let mut rng = Rng::seed_from_u64(200 + i as u64);
        let soft: Vec<f64> = bits.iter().map(|&b| 2.0 * f64::from(b) - 1.0 + noise.sample(&mut rng)).collect();
        let r = decide_and_count(Soft::Samples(&soft), &bits, Decision::OokThreshold(0.0)).expect("equal lengths");
        let p = q_function((2.0 * ebn0).sqrt());
        worst = worst.max((r.ber() - p).abs() / (p * (1.0 - p) / n as f64).sqrt());
    }
    check("BPSK over AWGN matches Q(√(2Eb/N0))", worst <= 4.0, format!("worst deviation {worst:.2} σ"))
}

fn loading_gap() -> Check {
    let cfg = OfdmConfig::default();
    let gap = snr_gap(2e-3).expect("valid target");
    let mut rng = Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let snr: Vec<f64> = (0..cfg.n_data_subcarriers).map(|_| 10f64.powf(rng.random_range(-1.0..4.0))).collect();
        let plan = load_bits_energy(&SnrProfile { snr: snr.clone() }, 2e-3, &cfg, &LoadingOptions::default()).expect("valid");
        let mut profile_worst: f64 = 0.0;
        for (k, &b) in plan.bits.iter().enumerate() {
            if b > 0 {
                let need = gap * (2f64.powi(b as i32) - 1.0);
                let have = plan.energy[k] * snr[k];
                profile_worst = profile_worst.max((need - have) / need);
            }
        }
        worst = worst.max(profile_worst).max((plan.mean_active_energy() - 1.0).abs());
    }
    check("loading plans meet the gap and keep unit energy", worst <= 1e-9, format!("worst violation {worst:.1e}"))
}
