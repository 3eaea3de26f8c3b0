use thiserror::Error;

/// Errors raised by the link models.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration violates an invariant.
    #[error("configuration error: {0}")]
    Config(String),

    /// Monte Carlo bins are too coarse for the dead-time model.
    #[error(
        "bin occupancy too high: {expected_arrivals:.1} expected arrivals per bin exceeds {limit:.1}; \
         use a sample rate of at least {min_sample_rate:.4e} Hz"
    )]
    BinOccupancy {
        expected_arrivals: f64,
        limit: f64,
        min_sample_rate: f64,
    },

    /// Sequence lengths or symbol counts do not line up.
    #[error("framing error: {0}")]
    Framing(String),

    /// The input carries no usable signal (e.g. zero variance).
    #[error("degenerate signal: {0}")]
    Degenerate(String),

    /// The laser drive went below its threshold voltage.
    #[error("drive voltage {voltage:.4} V below laser threshold {threshold:.4} V at sample {index}")]
    BelowThreshold {
        index: usize,
        voltage: f64,
        threshold: f64,
    },

    #[error("synchronization failed: peak normalized correlation {peak:.3} < 0.5")]
    SyncFailure { peak: f64 },

    #[error("RLS diverged at sample {0}")]
    Divergence(usize),

    #[error("zero channel estimate on active subcarrier {0}")]
    FdeSingularity(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
