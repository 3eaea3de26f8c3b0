use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use spadlink_core::loading::{
    estimate_snr, load_bits_energy, required_snr_factor, snr_gap, LoadingOptions, LoadingPlan, SnrProfile,
};
use spadlink_core::rx::{decide_and_count, BerReport, Decision, Soft};
use spadlink_core::tx::{generate_bits, map_block, OfdmConfig};

const TARGET: f64 = 2e-3;

fn check_plan(plan: &LoadingPlan, profile: &SnrProfile) {
    let gap = snr_gap(TARGET).unwrap();
    for ((&b, &e), &s) in plan.bits.iter().zip(&plan.energy).zip(&profile.snr) {
        if b == 0 {
            assert_eq!(e, 0.0);
        } else {
            let need = gap * ((1u64 << b) - 1) as f64;
            assert!(s * e >= need * (1.0 - 1e-9), "snr {s} energy {e} bits {b}");
        }
    }
    if plan.active() > 0 {
        assert!((plan.mean_active_energy() - 1.0).abs() < 1e-9);
    }
}

fn sloped_profile(n: usize, top_db: f64, bottom_db: f64) -> SnrProfile {
    SnrProfile {
        snr: (0..n)
            .map(|k| 10f64.powf((top_db + (bottom_db - top_db) * k as f64 / (n - 1) as f64) / 10.0))
            .collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn plans_are_consistent(seed in any::<u64>(), capped in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let profile = SnrProfile { snr: (0..511).map(|_| 10f64.powf(rng.random_range(-1.0..4.0))).collect() };
        let opts = LoadingOptions { energy_cap: if capped { Some(1.0) } else { None }, ..Default::default() };
        let plan = load_bits_energy(&profile, TARGET, &OfdmConfig::default(), &opts).unwrap();
        check_plan(&plan, &profile);
    }

    #[test]
    fn raising_one_snr_never_hurts(seed in any::<u64>(), k in 0usize..511, boost_db in 0.0f64..30.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = SnrProfile { snr: (0..511).map(|_| 10f64.powf(rng.random_range(-0.5..3.5))).collect() };
        let cfg = OfdmConfig::default();
        let opts = LoadingOptions::default();
        let before = load_bits_energy(&base, TARGET, &cfg, &opts).unwrap();
        let mut raised = base.clone();
        raised.snr[k] *= 10f64.powf(boost_db / 10.0);
        let after = load_bits_energy(&raised, TARGET, &cfg, &opts).unwrap();
        prop_assert!(after.bits[k] >= before.bits[k]);
        prop_assert!(after.total_rate >= before.total_rate);
    }
}

#[test]
fn uniform_profile_gives_uniform_bits() {
    for db in [8.0, 15.0, 20.0, 27.0, 35.0] {
        let p = SnrProfile::uniform(10f64.powf(db / 10.0), 511);
        let plan = load_bits_energy(&p, TARGET, &OfdmConfig::default(), &LoadingOptions::default()).unwrap();
        assert!(plan.bits.iter().all(|&b| b == plan.bits[0]), "{db} dB");
        assert!(plan.energy.iter().all(|&e| (e - 1.0).abs() < 1e-12));
        check_plan(&plan, &p);
    }
}

#[test]
fn bit_count_follows_gap_formula() {
    // at 20 dB: log2(1 + 100/Γ) ≈ 5.03 → 4 bits after rounding down to the allowed set
    let gap = snr_gap(TARGET).unwrap();
    let b = (1.0 + 100.0 / gap).log2();
    assert!(b > 4.0 && b < 6.0);
    let plan = load_bits_energy(&SnrProfile::uniform(100.0, 511), TARGET, &OfdmConfig::default(), &LoadingOptions::default())
        .unwrap();
    assert_eq!(plan.bits[0], 4);
}

#[test]
fn snr_estimate_with_known_noise() {
    let n_pilots = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let normal = Normal::new(0.0, (0.1f64 / 2.0).sqrt()).unwrap();
    let tx: Vec<Vec<Complex64>> = (0..n_pilots)
        .map(|_| {
            (0..511)
                .map(|_| {
                    let r = std::f64::consts::FRAC_1_SQRT_2;
                    Complex64::new(if rng.random() { r } else { -r }, if rng.random() { r } else { -r })
                })
                .collect()
        })
        .collect();
    let rx: Vec<Vec<Complex64>> = tx
        .iter()
        .map(|b| b.iter().map(|x| x + Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng))).collect())
        .collect();
    let p = estimate_snr(&rx, &tx).unwrap();
    // error power is (0.1/n)·χ²_{2n}/2: relative sd 1/√n
    let rel = 1.0 / (n_pilots as f64).sqrt();
    for s in &p.snr {
        assert!(*s > 10.0 / (1.0 + 4.0 * rel) && *s < 10.0 / (1.0 - 4.0 * rel), "{s}");
    }
    // 1/χ² bias: E[snr] = 10·n/(n−1)
    let mean = p.snr.iter().sum::<f64>() / 511.0;
    let expect = 10.0 * n_pilots as f64 / (n_pilots as f64 - 1.0);
    assert!((mean - expect).abs() < 4.0 * expect * rel / 511f64.sqrt() * 1.2, "{mean} vs {expect}");
}

/// Frequency-domain channel with per-subcarrier SNR `profile` at unit energy.
fn run_plan(plan: &LoadingPlan, profile: &SnrProfile, seed: u64) -> BerReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = BerReport::default();
    let mut block = 0u64;
    while total.bit_errors < 100 || total.bits_compared < 200_000 {
        let bits = generate_bits(plan.bits_per_block(), seed * 1_000_003 + block);
        let syms = map_block(&bits, plan).unwrap();
        let rx: Vec<Complex64> = syms
            .iter()
            .zip(&profile.snr)
            .map(|(s, &snr)| {
                let sd = (0.5 / snr).sqrt();
                let n = Normal::new(0.0, sd).unwrap();
                s + Complex64::new(n.sample(&mut rng), n.sample(&mut rng))
            })
            .collect();
        let r = decide_and_count(Soft::Blocks(&[rx]), &bits, Decision::Qam(plan)).unwrap();
        total.merge(&r);
        block += 1;
        assert!(block < 20_000, "no convergence");
    }
    total
}

#[test]
fn loaded_plan_meets_target_end_to_end() {
    let cfg = OfdmConfig::default();
    for (i, profile) in [sloped_profile(511, 32.0, 6.0), sloped_profile(511, 14.0, 3.0), SnrProfile::uniform(400.0, 511)]
        .into_iter()
        .enumerate()
    {
        let plan = load_bits_energy(&profile, TARGET, &cfg, &LoadingOptions::default()).unwrap();
        assert!(plan.active() > 0);
        let r = run_plan(&plan, &profile, 10 + i as u64);
        assert!(r.ber() <= 1.5 * TARGET, "profile {i}: ber {:.3e} over {} bits", r.ber(), r.bits_compared);
    }
}

#[test]
fn one_bit_level_costs_more_than_the_plain_gap() {
    assert_eq!(required_snr_factor(0), 0.0);
    assert_eq!(required_snr_factor(1), 1.5);
    assert_eq!(required_snr_factor(4), 15.0);
}
