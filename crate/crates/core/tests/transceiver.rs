use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::FftPlanner;

use spadlink_core::dsp::{q_function, rrc_taps};
use spadlink_core::loading::LoadingPlan;
use spadlink_core::qam::{order_of, qam_map, SUPPORTED_BITS};
use spadlink_core::rx::{
    decide_and_count, matched_filter_downsample, ofdm_demodulate, synchronize, train_slicer, Decision,
    OfdmDemodulator, Soft,
};
use spadlink_core::spad::FirstOrderLowpass;
use spadlink_core::tx::{
    clip_and_scale, electro_optic, generate_bits, map_block, ofdm_assemble, ook_modulate, DriveConfig,
    OfdmConfig, OfdmModulator, OokConfig,
};

fn mf_all(bits: &[u8], cfg: &OokConfig) -> Vec<f64> {
    let tx = ook_modulate(bits, cfg).unwrap();
    matched_filter_downsample(&tx.samples, cfg, 0, bits.len()).unwrap()
}

#[test]
fn ook_all_ones_back_to_back() {
    let cfg = OokConfig::default();
    let bits = vec![1u8; 400];
    let y = mf_all(&bits, &cfg);
    // away from the edges of the burst the pulse train is flat
    for v in &y[100..300] {
        assert!((v - 1.0).abs() < 1e-3, "{v}");
    }
}

#[test]
fn ook_single_pulse_is_nyquist() {
    let cfg = OokConfig::default();
    let mut bits = vec![0u8; 201];
    bits[100] = 1;
    let tx = ook_modulate(&bits, &cfg).unwrap();
    let neg = ook_modulate(&vec![0u8; 201], &cfg).unwrap();
    // isolate the one pulse by removing the all-zero response
    let pulse: Vec<f64> = tx.samples.iter().zip(&neg.samples).map(|(a, b)| (a - b) / 2.0).collect();
    let y = matched_filter_downsample(&pulse, &cfg, 0, 201).unwrap();
    assert!((y[100] - 1.0).abs() < 1e-12);
    for (k, v) in y.iter().enumerate() {
        if k != 100 {
            assert!(v.abs() <= 1e-3, "isi at {k}: {v}");
        }
    }
}

#[test]
fn ook_spectrum_is_band_limited() {
    let cfg = OokConfig::default();
    let bits: Vec<u8> = (0..4096).map(|k| (k % 2) as u8).collect();
    let tx = ook_modulate(&bits, &cfg).unwrap();
    let n = tx.samples.len();
    let nfft = n.next_power_of_two() * 2;
    // Hann-windowed periodogram
    let mut buf: Vec<Complex64> = tx
        .samples
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos();
            Complex64::new(v * w, 0.0)
        })
        .collect();
    buf.resize(nfft, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(nfft).process(&mut buf);
    let fs = cfg.sample_rate();
    let peak = buf[..nfft / 2].iter().map(|c| c.norm()).fold(0.0, f64::max);
    let edge = (1.0 + cfg.rrc_rolloff) * cfg.symbol_rate / 2.0 + cfg.symbol_rate / cfg.rrc_span_symbols as f64;
    let worst = buf[..nfft / 2]
        .iter()
        .enumerate()
        .filter(|(k, _)| *k as f64 * fs / nfft as f64 >= edge)
        .map(|(_, c)| c.norm())
        .fold(0.0, f64::max);
    let db = 20.0 * (worst / peak).log10();
    assert!(db <= -40.0, "stopband {db:.1} dB");
}

#[test]
fn matched_filter_shift_and_noise() {
    let cfg = OokConfig::default();
    let bits = generate_bits(300, 4);
    let tx = ook_modulate(&bits, &cfg).unwrap();
    let y = matched_filter_downsample(&tx.samples, &cfg, 0, 300).unwrap();
    for (v, &b) in y[64..236].iter().zip(&bits[64..236]) {
        assert_eq!(*v > 0.0, b == 1);
        assert!((v.abs() - 1.0).abs() < 5e-3, "{v}");
    }
    let k = 7;
    let mut shifted = vec![0.0; k * cfg.samples_per_symbol];
    shifted.extend_from_slice(&tx.samples);
    let ys = matched_filter_downsample(&shifted, &cfg, 0, 300 + k).unwrap();
    for i in 0..300 {
        assert!((ys[i + k] - y[i]).abs() < 1e-9);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sigma = 0.3;
    let normal = Normal::new(0.0, sigma).unwrap();
    let noise: Vec<f64> = (0..400_000).map(|_| normal.sample(&mut rng)).collect();
    let n_sym = (noise.len() - cfg.pulse().len()) / cfg.samples_per_symbol;
    let out = matched_filter_downsample(&noise, &cfg, 0, n_sym).unwrap();
    let sd = (out.iter().map(|v| v * v).sum::<f64>() / out.len() as f64).sqrt();
    assert!((sd / sigma - 1.0).abs() < 0.02, "{sd}");
}

#[test]
fn qam_unit_energy() {
    for b in SUPPORTED_BITS {
        let bits = generate_bits(100_000, 17 + u64::from(b));
        let bits = &bits[..bits.len() / b as usize * b as usize];
        let s = qam_map(bits, order_of(b)).unwrap();
        let e = s.iter().map(|c| c.norm_sqr()).sum::<f64>() / s.len() as f64;
        assert!((0.99..=1.01).contains(&e), "order {}: {e}", order_of(b));
    }
}

#[test]
fn ofdm_zero_and_single_tone() {
    let cfg = OfdmConfig::default();
    let zeros = vec![Complex64::new(0.0, 0.0); 511];
    assert!(ofdm_assemble(&zeros, &cfg).unwrap().iter().all(|&v| v == 0.0));

    let k = 37;
    let mut sym = zeros.clone();
    sym[k - 1] = Complex64::new(1.0, 0.0);
    let x = ofdm_assemble(&sym, &cfg).unwrap();
    let n = cfg.fft_size as f64;
    let f = k as f64 * cfg.modulation_bandwidth / n;
    let amp = 2.0 / n.sqrt();
    for (i, &v) in x.iter().enumerate() {
        // sample i of the block sits at time (i − cp)/fs
        let t = (i as f64 - cfg.cp_length as f64) / cfg.modulation_bandwidth;
        let expected = amp * (2.0 * std::f64::consts::PI * f * t).cos();
        assert!((v - expected).abs() < 1e-12, "{i}: {v} vs {expected}");
    }
}

#[test]
fn ofdm_parseval_and_real_output() {
    let cfg = OfdmConfig::default();
    let m = OfdmModulator::new(&cfg).unwrap();
    let bits = generate_bits(511 * 4, 8);
    let syms = qam_map(&bits, 16).unwrap();
    let spec = m.spectrum(&syms).unwrap();
    // imaginary residue of the raw inverse transform
    let mut buf = spec.clone();
    FftPlanner::new().plan_fft_inverse(cfg.fft_size).process(&mut buf);
    let rms = (buf.iter().map(|c| c.re * c.re).sum::<f64>() / buf.len() as f64).sqrt();
    let imag = buf.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
    assert!(imag <= 1e-12 * rms);
    let x = m.assemble(&syms).unwrap();
    let time_e: f64 = x[cfg.cp_length..].iter().map(|v| v * v).sum();
    let freq_e: f64 = spec.iter().map(|c| c.norm_sqr()).sum();
    assert!((time_e - freq_e).abs() <= 1e-10 * freq_e);
}

#[test]
fn ofdm_back_to_back_all_orders() {
    let cfg = OfdmConfig::default();
    let m = OfdmModulator::new(&cfg).unwrap();
    let h = vec![Complex64::new(1.0, 0.0); 511];
    for b in SUPPORTED_BITS {
        let plan = LoadingPlan::uniform(b, 511, &cfg);
        let cfg_b = OfdmConfig { loading: Some(plan.clone()), ..cfg.clone() };
        let mut samples = Vec::new();
        let mut truth = Vec::new();
        let mut syms_all = Vec::new();
        for blk in 0..3 {
            let bits = generate_bits(plan.bits_per_block(), 40 + blk);
            let syms = map_block(&bits, &plan).unwrap();
            samples.extend(m.assemble(&syms).unwrap());
            truth.extend(bits);
            syms_all.push(syms);
        }
        let out = ofdm_demodulate(&samples, &cfg_b, 0, 3, &h, None).unwrap();
        for (o, s) in out.iter().zip(&syms_all) {
            for (a, b) in o.iter().zip(s) {
                assert!((a - b).norm() < 1e-10);
            }
        }
        let r = decide_and_count(Soft::Blocks(&out), &truth, Decision::Qam(&plan)).unwrap();
        assert_eq!(r.bit_errors, 0, "order {}", order_of(b));
    }
}

#[test]
fn ofdm_lowpass_channel_pilot_estimate() {
    let cfg = OfdmConfig::default();
    let m = OfdmModulator::new(&cfg).unwrap();
    let demod = OfdmDemodulator::new(&cfg).unwrap();
    let lp = FirstOrderLowpass::new(250e6, cfg.modulation_bandwidth);
    let n_pilot = 4;
    let n_data = 4;
    let mut tx_syms = Vec::new();
    let mut samples = Vec::new();
    for blk in 0..(n_pilot + n_data) {
        let bits = generate_bits(511 * 2, 90 + blk as u64);
        let s = qam_map(&bits, 4).unwrap();
        samples.extend(m.assemble(&s).unwrap());
        tx_syms.push(s);
    }
    let y = lp.filter(samples.iter().copied());
    let raw = demod.raw_blocks(&y, 0, n_pilot + n_data).unwrap();
    let h = demod.estimate_channel(&raw[1..n_pilot], &tx_syms[1..n_pilot]).unwrap();
    let eq = demod.equalize(raw[n_pilot..].to_vec(), &h, &[true; 511]).unwrap();
    for k in 0..511 {
        let err: f64 = eq.iter().zip(&tx_syms[n_pilot..]).map(|(r, t)| (r[k] - t[k]).norm_sqr()).sum();
        let sig: f64 = tx_syms[n_pilot..].iter().map(|t| t[k].norm_sqr()).sum();
        let evm_db = 10.0 * (err / sig).log10();
        assert!(evm_db <= -30.0, "subcarrier {k}: {evm_db:.1} dB");
        // estimate agrees with the analytic response
        let hk = {
            let f = cfg.subcarrier_frequency(k);
            let z = Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * f / cfg.modulation_bandwidth);
            let w = (std::f64::consts::PI * 250e6 / cfg.modulation_bandwidth).tan();
            (w / (1.0 + w)) * (1.0 + z) / (1.0 + (w - 1.0) / (1.0 + w) * z)
        };
        assert!((h[k] - hk).norm() / hk.norm() < 0.03, "{k}");
    }
}

#[test]
fn clipping_statistics_and_power() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let x: Vec<f64> = (0..1_000_000).map(|_| normal.sample(&mut rng)).collect();
    let d = DriveConfig::default();
    let c3 = clip_and_scale(&x, 1.4e9, 3.0, &d).unwrap();
    let p = 2.0 * q_function(3.0);
    let sd = (p * (1.0 - p) / 1e6).sqrt();
    assert!((c3.clipped_fraction - p).abs() < 4.0 * sd, "{}", c3.clipped_fraction);
    assert!(c3.drive.samples.iter().all(|v| v.abs() <= d.vpp / 2.0 + 1e-15));

    let var = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64;
    let c2 = clip_and_scale(&x, 1.4e9, 2.0, &d).unwrap();
    let c45 = clip_and_scale(&x, 1.4e9, 4.5, &d).unwrap();
    // power removed by clipping itself is factored out via the normalized signal
    let ratio = (var(&c2.drive.samples) / var(&c2.normalized)) / (var(&c45.drive.samples) / var(&c45.normalized));
    assert!((ratio / (4.5f64 / 2.0).powi(2) - 1.0).abs() < 0.05, "{ratio}");
    let raw = var(&c2.drive.samples) / var(&c45.drive.samples);
    assert!(raw > 4.0 && raw < ratio, "{raw}");
}

#[test]
fn ook_drive_average_power_is_midpoint() {
    let cfg = OokConfig::default();
    let d = DriveConfig::default();
    let bits = generate_bits(100_000, 77);
    let tx = ook_modulate(&bits, &cfg).unwrap();
    let mut drive = tx.clone();
    drive.samples.iter_mut().for_each(|v| *v *= d.vpp / 2.0);
    let p = electro_optic(&drive, &d, 1.0, None).unwrap();
    let mid = d.eo_slope * (d.laser_bias - d.eo_threshold);
    assert!((p.average_power() / mid - 1.0).abs() < 0.01, "{}", p.average_power());
}

#[test]
fn sync_under_noise() {
    let pre: Vec<f64> = generate_bits(127, 2).iter().map(|&b| 2.0 * f64::from(b) - 1.0).collect();
    let sigma = (10f64.powf(-10.0 / 10.0)).sqrt();
    let mut hits = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).unwrap();
        let mut rx: Vec<f64> = (0..3000).map(|_| normal.sample(&mut rng)).collect();
        for (i, p) in pre.iter().enumerate() {
            rx[1234 + i] += p;
        }
        if synchronize(&rx, &pre, None).ok() == Some(1234) {
            hits += 1;
        }
    }
    assert!(hits >= 99, "{hits}");

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let noise: Vec<f64> = (0..3000).map(|_| normal.sample(&mut rng)).collect();
    assert!(synchronize(&noise, &pre, None).is_err());
}

#[test]
fn bpsk_awgn_ber_matches_closed_form() {
    let ebn0_db = 9.6;
    let ebn0 = 10f64.powf(ebn0_db / 10.0);
    let sigma = (1.0 / (2.0 * ebn0)).sqrt();
    let n = 10_000_000usize;
    let bits = generate_bits(n, 1234);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let normal = Normal::new(0.0, sigma).unwrap();
    let soft: Vec<f64> = bits.iter().map(|&b| 2.0 * f64::from(b) - 1.0 + normal.sample(&mut rng)).collect();
    let r = decide_and_count(Soft::Samples(&soft), &bits, Decision::OokThreshold(0.0)).unwrap();
    let p = q_function((2.0 * ebn0).sqrt());
    let sd = (p * (1.0 - p) / n as f64).sqrt();
    assert!((r.ber() - p).abs() <= 4.0 * sd, "{} vs {p}", r.ber());
}

#[test]
fn ook_ber_invariant_to_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let bits = generate_bits(20_000, 6);
    let soft: Vec<f64> = bits
        .iter()
        .map(|&b| 0.3 + 0.7 * f64::from(b) + rng.random_range(-0.5..0.5))
        .collect();
    let t = train_slicer(&soft, &bits).unwrap();
    let base = decide_and_count(Soft::Samples(&soft), &bits, Decision::OokThreshold(t)).unwrap();
    for s in [0.01, 3.0, 1e4] {
        let scaled: Vec<f64> = soft.iter().map(|v| v * s).collect();
        let ts = train_slicer(&scaled, &bits).unwrap();
        let r = decide_and_count(Soft::Samples(&scaled), &bits, Decision::OokThreshold(ts)).unwrap();
        assert_eq!(r, base);
    }
}

#[test]
fn rrc_pulse_matches_config() {
    let cfg = OokConfig::default();
    assert_eq!(cfg.pulse(), rrc_taps(0.1, 4, 64));
}
