//! Link-level models for optical wireless communication with SPAD-array
//! (SiPM) receivers.
//!
//! The crate is split along the signal path:
//!
//! - [`spad`]: closed-form dead-time saturation laws, photon-level Monte Carlo
//!   detection and the analog front end.
//! - [`tx`]: OOK and DCO-OFDM waveform synthesis, clipping and the
//!   electro-optic drive.
//! - [`rx`]: synchronization, matched filtering, OFDM demodulation, decisions.
//! - [`equalizer`]: second-order Volterra equalizer trained with RLS.
//! - [`loading`]: per-subcarrier SNR estimation and bit/energy loading.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dsp;
pub mod equalizer;
pub mod error;
pub mod loading;
pub mod qam;
pub mod rx;
pub mod spad;
pub mod tx;
pub mod waveform;

pub use error::{Error, Result};
pub use waveform::{ElectricalWaveform, OpticalWaveform};

/// Planck constant, J·s.
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Deterministic RNG used throughout; every stochastic operation takes a seed.
pub type Rng = rand_chacha::ChaCha12Rng;

pub(crate) fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
