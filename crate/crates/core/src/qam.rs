//! Gray-mapped square QAM (BPSK for one bit per symbol), unit average energy.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Bits per symbol supported by the mapper.
pub const SUPPORTED_BITS: [u32; 6] = [1, 2, 4, 6, 8, 10];

fn check_bits(bits_per_symbol: u32) -> Result<()> {
    if SUPPORTED_BITS.contains(&bits_per_symbol) {
        Ok(())
    } else {
        Err(Error::Domain(format!("unsupported QAM size: {bits_per_symbol} bits per symbol")))
    }
}

/// Order (constellation size) for a bit count.
pub fn order_of(bits_per_symbol: u32) -> u32 {
    1 << bits_per_symbol
}

pub fn bits_of_order(order: u32) -> Result<u32> {
    if order.is_power_of_two() {
        let b = order.trailing_zeros();
        check_bits(b)?;
        Ok(b)
    } else {
        Err(Error::Domain(format!("unsupported QAM order {order}")))
    }
}

/// Amplitude scale putting a square constellation at unit mean energy.
fn scale(bits_per_symbol: u32) -> f64 {
    if bits_per_symbol == 1 {
        1.0
    } else {
        let m = f64::from(order_of(bits_per_symbol));
        (2.0 * (m - 1.0) / 3.0).sqrt().recip()
    }
}

/// Gray-coded PAM level in {-(L-1), ..., L-1} for `bits` (MSB first).
fn pam_level(bits: &[u8]) -> f64 {
    let mut gray = 0u32;
    for &b in bits {
        gray = (gray << 1) | u32::from(b & 1);
    }
    let mut idx = gray;
    let mut shift = gray >> 1;
    while shift != 0 {
        idx ^= shift;
        shift >>= 1;
    }
    let levels = 1u32 << bits.len();
    2.0 * f64::from(idx) - f64::from(levels - 1)
}

/// Inverse of [`pam_level`]: nearest level, written back as Gray bits.
fn pam_decide(value: f64, n_bits: usize, out: &mut Vec<u8>) {
    let levels = 1i64 << n_bits;
    let idx = (((value + (levels - 1) as f64) / 2.0).round() as i64).clamp(0, levels - 1) as u32;
    let gray = idx ^ (idx >> 1);
    for k in (0..n_bits).rev() {
        out.push(((gray >> k) & 1) as u8);
    }
}

/// Maps one symbol's worth of bits.
pub fn map_symbol(bits: &[u8]) -> Result<Complex64> {
    let b = bits.len() as u32;
    check_bits(b)?;
    let s = scale(b);
    if b == 1 {
        return Ok(Complex64::new(if bits[0] & 1 == 1 { 1.0 } else { -1.0 }, 0.0));
    }
    let half = bits.len() / 2;
    Ok(Complex64::new(pam_level(&bits[..half]), pam_level(&bits[half..])) * s)
}

/// Minimum-distance decision for one symbol, appending its bits to `out`.
pub fn demap_symbol(symbol: Complex64, bits_per_symbol: u32, out: &mut Vec<u8>) {
    if bits_per_symbol == 1 {
        out.push(u8::from(symbol.re > 0.0));
        return;
    }
    let s = scale(bits_per_symbol);
    let half = bits_per_symbol as usize / 2;
    pam_decide(symbol.re / s, half, out);
    pam_decide(symbol.im / s, half, out);
}

/// Gray-mapped square QAM of the given order.
pub fn qam_map(bits: &[u8], order: u32) -> Result<Vec<Complex64>> {
    let b = bits_of_order(order)? as usize;
    if !bits.len().is_multiple_of(b) {
        return Err(Error::Framing(format!(
            "{} bits do not divide into {b}-bit symbols",
            bits.len()
        )));
    }
    bits.chunks(b).map(map_symbol).collect()
}

pub fn qam_demap(symbols: &[Complex64], order: u32) -> Result<Vec<u8>> {
    let b = bits_of_order(order)?;
    let mut out = Vec::with_capacity(symbols.len() * b as usize);
    for &s in symbols {
        demap_symbol(s, b, &mut out);
    }
    Ok(out)
}
