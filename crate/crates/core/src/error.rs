use thiserror::Error;

use crate::mixture::LatticeIndex;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model parameters: delta={delta}, delta_prime={delta_prime} (both must be finite and >= 2)")]
    InvalidParams { delta: f64, delta_prime: f64 },

    #[error("divided-difference nodes must be distinct and strictly decreasing")]
    DistinctRates,

    #[error("lattice depth {depth} exceeds the configured maximum {max}")]
    DepthExceeded { depth: usize, max: usize },

    #[error("mixture has no mass left (all weights zero or pruned away)")]
    DegenerateMixture,

    #[error("argument {0} outside the open unit interval")]
    Domain(f64),

    #[error("observation {value} invalid for the {channel} channel")]
    InvalidObservation { value: u64, channel: String },

    #[error("observation has zero predictive probability under every component")]
    ImpossibleObservation,

    #[error("numerical instability: {0}")]
    NumericalInstability(String),

    #[error("prediction weights for component ({}, {}) sum to 1{sum:+e}, beyond tolerance", index.i, index.j)]
    WeightSumDeviation { index: LatticeIndex, sum: f64 },

    #[error("spectral truncation order {order} insufficient: tail factor {tail:e} above bound {bound:e}")]
    Truncation { order: usize, tail: f64, bound: f64 },

    #[error("all particle weights vanished at step {step}")]
    DegenerateWeights { step: usize },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;
