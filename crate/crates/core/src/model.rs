//! System parameterization, state space, and the stability test shared by
//! every other module.

use serde::Serialize;
use thiserror::Error;

/// Parameter validation failures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("service rate {name} must be positive and finite, got {value}")]
    NonPositiveRate { name: &'static str, value: f64 },
    #[error("arrival rate must be non-negative, got {value}")]
    NegativeArrival { value: f64 },
    #[error("arrival rate must be finite, got {value}")]
    NonFiniteArrival { value: f64 },
    #[error("block capacity must be at least 1, got {b}")]
    InvalidBlockSize { b: u32 },
}

/// Parameters of the two-stage queue: transactions arrive at rate `lambda`,
/// block generation completes at rate `mu1` (claiming up to `b` pooled
/// transactions), and blockchain building completes at rate `mu2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Params {
    /// Transaction arrival rate (per unit time). Zero is allowed for
    /// degenerate tests even though a real system has a positive stream.
    pub lambda: f64,
    /// Block-generation service rate (per unit time), strictly positive.
    pub mu1: f64,
    /// Blockchain-building service rate (per unit time), strictly positive.
    pub mu2: f64,
    /// Maximum number of transactions per block, at least 1.
    pub b: u32,
}

impl Params {
    pub fn new(lambda: f64, mu1: f64, mu2: f64, b: u32) -> Result<Self, ParamError> {
        let p = Params { lambda, mu1, mu2, b };
        p.validate()?;
        Ok(p)
    }

    /// Checks all field invariants, returning the first violation.
    pub fn validate(&self) -> Result<(), ParamError> {
        if !(self.mu1 > 0.0) || !self.mu1.is_finite() {
            return Err(ParamError::NonPositiveRate { name: "mu1", value: self.mu1 });
        }
        if !(self.mu2 > 0.0) || !self.mu2.is_finite() {
            return Err(ParamError::NonPositiveRate { name: "mu2", value: self.mu2 });
        }
        if self.lambda < 0.0 || self.lambda.is_nan() {
            return Err(ParamError::NegativeArrival { value: self.lambda });
        }
        if !self.lambda.is_finite() {
            return Err(ParamError::NonFiniteArrival { value: self.lambda });
        }
        if self.b < 1 {
            return Err(ParamError::InvalidBlockSize { b: self.b });
        }
        Ok(())
    }

    /// Throughput capacity of one full generate-then-build cycle:
    /// `b * mu1 * mu2 / (mu1 + mu2)`, i.e. capacity `b` divided by the mean
    /// cycle time `1/mu1 + 1/mu2`.
    pub fn throughput_bound(&self) -> f64 {
        self.b as f64 * self.mu1 * self.mu2 / (self.mu1 + self.mu2)
    }

    /// Stability test. The system is stable iff the throughput bound
    /// strictly exceeds the arrival rate; the boundary case is classified
    /// unstable (no stationary distribution exists there).
    pub fn stability(&self) -> StabilityReport {
        let bound = self.throughput_bound();
        StabilityReport {
            bound,
            lambda: self.lambda,
            stable: bound > self.lambda,
            margin: bound - self.lambda,
        }
    }
}

/// A point of the state space: `block` transactions in the in-progress block
/// (0 while mining, 1..=b while the block is being pegged) and `pool`
/// transactions waiting in the transaction pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct State {
    pub block: u32,
    pub pool: u32,
}

/// Outcome of the stability test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityReport {
    /// The throughput capacity `b * mu1 * mu2 / (mu1 + mu2)`.
    pub bound: f64,
    /// The arrival rate the bound is compared against.
    pub lambda: f64,
    /// True iff `bound > lambda` (strict).
    pub stable: bool,
    /// `bound - lambda`; positive iff stable.
    pub margin: f64,
}

impl std::fmt::Display for StabilityReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "bound={} lambda={} stable={} margin={}",
            self.bound, self.lambda, self.stable, self.margin
        )
    }
}

/// Stationary mean occupancy: the average number of transactions in the
/// block (`block_mean`, in `[0, b]`) and in the pool (`pool_mean`, `>= 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub block_mean: f64,
    pub pool_mean: f64,
}
