use thiserror::Error;

/// Errors raised by model construction and the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid channel (p={p}, r={r}, delta={delta}): {reason}")]
    InvalidChannel {
        p: f64,
        r: f64,
        delta: f64,
        reason: &'static str,
    },

    #[error("belief {0} is outside [0, 1]")]
    InvalidBelief(f64),

    #[error("discount factor {0} is outside [0, 1)")]
    InvalidDiscount(f64),

    #[error("payoff pair (gamma_h={gamma_h}, gamma_l={gamma_l}) violates 0 <= gamma_l <= delta={delta}, 0 <= gamma_h <= 1")]
    InvalidPayoffPair {
        gamma_h: f64,
        gamma_l: f64,
        delta: f64,
    },

    #[error("reward model delta {model} does not match channel delta {channel}")]
    DeltaMismatch { model: f64, channel: f64 },

    #[error("threshold {threshold:?} is inconsistent with subsidy {omega}: {reason}")]
    InconsistentThreshold {
        threshold: crate::subsidy::ThresholdClass,
        omega: f64,
        reason: String,
    },

    #[error("subsidy {omega} is outside the open interval (delta={delta}, 1)")]
    SubsidyOutOfRange { omega: f64, delta: f64 },

    #[error("no sign change between active and idle values: {0}")]
    NoSignChange(String),

    #[error(
        "value iteration did not converge within {sweeps} sweeps (last change {last_change:e})"
    )]
    NotConverged { sweeps: usize, last_change: f64 },

    #[error("grid size {0} is below the minimum of 101")]
    GridTooSmall(usize),

    #[error("horizon {horizon} exceeds the cap of {cap}")]
    HorizonTooLarge { horizon: usize, cap: usize },

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error(
        "threshold not strictly increasing: pi*({omega_lo}) = {pi_lo}, pi*({omega_hi}) = {pi_hi}"
    )]
    MonotonicityViolation {
        omega_lo: f64,
        pi_lo: f64,
        omega_hi: f64,
        pi_hi: f64,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
