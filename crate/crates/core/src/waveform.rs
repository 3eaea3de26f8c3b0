use crate::error::{Error, Result};

/// Uniformly sampled optical power trace (watts).
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalWaveform {
    sample_rate: f64,
    samples: Vec<f64>,
}

impl OpticalWaveform {
    pub fn new(sample_rate: f64, samples: Vec<f64>) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::Config(format!("sample rate must be positive, got {sample_rate}")));
        }
        if let Some((i, p)) = samples.iter().enumerate().find(|(_, p)| !(**p >= 0.0 && p.is_finite())) {
            return Err(Error::Domain(format!("optical power must be finite and nonnegative, sample {i} is {p}")));
        }
        Ok(Self { sample_rate, samples })
    }

    /// A constant-power trace lasting `duration` seconds.
    pub fn constant(power: f64, sample_rate: f64, duration: f64) -> Result<Self> {
        let n = (duration * sample_rate).round() as usize;
        Self::new(sample_rate, vec![power; n])
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    /// Time-averaged power.
    pub fn average_power(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.samples.iter().sum::<f64>() / self.samples.len() as f64
        }
    }
}

/// Uniformly sampled signed voltage trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectricalWaveform {
    pub sample_rate: f64,
    pub samples: Vec<f64>,
}

impl ElectricalWaveform {
    pub fn new(sample_rate: f64, samples: Vec<f64>) -> Self {
        Self { sample_rate, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> f64 {
        crate::dsp::mean(&self.samples)
    }
}
