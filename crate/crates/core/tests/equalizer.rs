use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spadlink_core::equalizer::{rls_train, volterra_apply, EqualizerConfig, EqualizerMode, VolterraWeights};

/// Literal double sum over the second-order kernel.
fn brute_force(x: &[f64], w: &VolterraWeights) -> Vec<f64> {
    let at = |k: isize| if k < 0 { 0.0 } else { x[k as usize] };
    (0..x.len() as isize)
        .map(|n| {
            let mut d = 0.0;
            for i in 0..w.n_linear() {
                d += w.w1[i] * at(n - i as isize);
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

fn random_weights(rng: &mut ChaCha8Rng, nl: usize, nq: usize) -> VolterraWeights {
    let mut w = VolterraWeights::zeros(nl, nq);
    for v in w.w1.iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    for m1 in 0..nq {
        for m2 in m1..nq {
            w.set_w2(m1, m2, rng.random_range(-0.5..0.5));
        }
    }
    w
}

fn rel_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * scale)
}

#[test]
fn volterra_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (nl, nq) in [(2, 2), (8, 4), (41, 21)] {
        for _ in 0..5 {
            let w = random_weights(&mut rng, nl, nq);
            let x: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.0..1.0)).collect();
            assert!(rel_close(&volterra_apply(&x, &w), &brute_force(&x, &w), 1e-12));
        }
    }
}

#[test]
fn zero_kernel_is_fir() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut w = random_weights(&mut rng, 41, 21);
    let x: Vec<f64> = (0..500).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut lin = VolterraWeights::zeros(41, 0);
    lin.w1 = w.w1.clone();
    for m1 in 0..21 {
        for m2 in m1..21 {
            w.set_w2(m1, m2, 0.0);
        }
    }
    let fir: Vec<f64> = (0..x.len())
        .map(|n| (0..41).filter(|&i| i <= n).map(|i| w.w1[i] * x[n - i]).sum())
        .collect();
    assert!(rel_close(&volterra_apply(&x, &w), &fir, 1e-12));
    assert!(rel_close(&volterra_apply(&x, &lin), &fir, 1e-12));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn volterra_equals_double_sum(seed in any::<u64>(), nl in 1usize..12, nq_frac in 0.0f64..1.0, len in 1usize..80) {
        let nq = ((nl as f64) * nq_frac) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_weights(&mut rng, nl, nq);
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-2.0..2.0)).collect();
        prop_assert!(rel_close(&volterra_apply(&x, &w), &brute_force(&x, &w), 1e-12));
    }
}

fn white(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 } * rng.random_range(0.2..1.0)).collect()
}

#[test]
fn identity_channel_converges_to_unit_tap() {
    let cfg = EqualizerConfig::default();
    let x = white(10 * cfg.total_taps() + 200, 3);
    let t = rls_train(&x, &x, &cfg).unwrap();
    let d = cfg.delay();
    assert!((t.weights.w1[d] - 1.0).abs() < 1e-3);
    for (i, w) in t.weights.w1.iter().enumerate() {
        if i != d {
            assert!(w.abs() < 1e-3, "w1[{i}] = {w}");
        }
    }
    assert!(t.weights.w2_packed().iter().all(|w| w.abs() < 1e-3));
    assert!(t.final_mse() < 1e-6, "{}", t.final_mse());
}

#[test]
fn three_tap_channel_linear_mode() {
    let cfg = EqualizerConfig { mode: EqualizerMode::LinearOnly, ..Default::default() };
    let s = white(10 * cfg.total_taps() + 100, 4);
    // minimum-phase channel so a finite causal-plus-delay inverse exists
    let h = [1.0, 0.4, 0.1];
    let y: Vec<f64> = (0..s.len())
        .map(|n| (0..3).filter(|&i| i <= n).map(|i| h[i] * s[n - i]).sum())
        .collect();
    let t = rls_train(&y, &s, &cfg).unwrap();
    assert!(t.final_mse() < 1e-4, "{}", t.final_mse());
}

fn train_residual(x: &[f64], reference: &[f64], cfg: &EqualizerConfig) -> f64 {
    let t = rls_train(x, reference, cfg).unwrap();
    let d = cfg.delay();
    let y = volterra_apply(x, &t.weights);
    let n = reference.len().min(x.len() - d);
    (d..n).map(|j| (y[j + d] - reference[j]).powi(2)).sum::<f64>() / (n - d) as f64
}

#[test]
fn quadratic_channel_needs_volterra() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let lin_cfg = EqualizerConfig { n_linear: 11, n_nonlinear: 6, mode: EqualizerMode::LinearOnly, ..Default::default() };
    let vol_cfg = EqualizerConfig { mode: EqualizerMode::Volterra, ..lin_cfg };
    let x: Vec<f64> = (0..20_000).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = x.iter().map(|v| v + 0.2 * v * v).collect();
    // modelling the channel: the quadratic term is exactly representable
    let lin = train_residual(&x, &y, &lin_cfg);
    let vol = train_residual(&x, &y, &vol_cfg);
    assert!(vol <= 0.1 * lin, "volterra {vol:.3e} vs linear {lin:.3e}");
    // inverting it: the inverse is only approximately quadratic
    let xs: Vec<f64> = x.iter().map(|v| 0.5 * v).collect();
    let ys: Vec<f64> = xs.iter().map(|v| v + 0.2 * v * v).collect();
    let lin = train_residual(&ys, &xs, &lin_cfg);
    let vol = train_residual(&ys, &xs, &vol_cfg);
    assert!(vol <= 0.1 * lin, "volterra {vol:.3e} vs linear {lin:.3e}");
}

/// Batch least squares on the same stacked regressors.
fn batch_ls(x: &[f64], reference: &[f64], cfg: &EqualizerConfig) -> Vec<f64> {
    let d = cfg.delay();
    let n = reference.len().min(x.len() - d);
    let m = cfg.total_taps();
    let at = |k: isize| if k < 0 { 0.0 } else { x[k as usize] };
    let mut a = DMatrix::<f64>::zeros(n, m);
    for j in 0..n {
        let t = (j + d) as isize;
        let mut c = 0;
        for i in 0..cfg.n_linear {
            a[(j, c)] = at(t - i as isize);
            c += 1;
        }
        if cfg.mode == EqualizerMode::Volterra {
            for m1 in 0..cfg.n_nonlinear {
                for m2 in m1..cfg.n_nonlinear {
                    a[(j, c)] = at(t - m1 as isize) * at(t - m2 as isize);
                    c += 1;
                }
            }
        }
    }
    let b = DVector::from_column_slice(&reference[..n]);
    let sol = a.svd(true, true).solve(&b, 1e-14).unwrap();
    sol.iter().copied().collect()
}

#[test]
fn rls_without_forgetting_matches_batch_least_squares() {
    let cfg = EqualizerConfig {
        n_linear: 8,
        n_nonlinear: 4,
        rls_forgetting: 1.0,
        rls_delta: 1e-6,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let truth = random_weights(&mut rng, 8, 4);
    let x: Vec<f64> = (0..400).map(|_| rng.random_range(-1.0..1.0)).collect();
    // noiseless: reference is exactly realizable by the regressors
    let d = cfg.delay();
    let full = volterra_apply(&x, &truth);
    let reference: Vec<f64> = full[d..].to_vec();
    let t = rls_train(&x, &reference, &cfg).unwrap();
    let ls = batch_ls(&x, &reference, &cfg);
    let mut rls: Vec<f64> = t.weights.w1.clone();
    rls.extend_from_slice(t.weights.w2_packed());
    let scale = ls.iter().map(|v| v.abs()).fold(0.0, f64::max);
    for (a, b) in rls.iter().zip(&ls) {
        assert!((a - b).abs() <= 1e-6 * scale, "{a} vs {b}");
    }
}
