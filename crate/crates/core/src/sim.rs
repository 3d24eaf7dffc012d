//! Discrete-event simulation of the same dynamics as an independent code
//! path, used to cross-validate the exact solver and open the door to
//! non-exponential extensions.
//!
//! Estimates are time averages over `[warmup, horizon]` with batch-means
//! standard errors.
//!
//! Reproducibility contract: one ChaCha8 stream per run, seeded with
//! `SimConfig::seed`; every event consumes exactly two draws in order (the
//! inter-event time, then the event selector), and uniforms are derived from
//! raw 64-bit output as `(bits >> 11) * 2^-53`. The stream layout is part of
//! the golden-test contract and must not change silently.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::model::{ParamError, Params};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {reason}")]
    BadConfig { reason: String },
    #[error("batch means need at least 10 batches, got {got}")]
    TooFewBatches { got: usize },
    #[error("run produced no averaging window after warmup")]
    DegenerateRun,
    #[error(transparent)]
    InvalidParams(#[from] ParamError),
}

/// Simulation run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimConfig {
    /// Total simulated time.
    pub horizon: f64,
    /// Initial stretch discarded from the averages.
    pub warmup: f64,
    /// Batch count for batch-means standard errors (at least 10).
    pub n_batches: usize,
    /// Seed of the per-run random stream.
    pub seed: u64,
}

impl SimConfig {
    /// Defaults: warmup is 10% of the horizon, 20 batches.
    pub fn new(horizon: f64, seed: u64) -> Self {
        SimConfig { horizon, warmup: 0.1 * horizon, n_batches: 20, seed }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(SimError::BadConfig {
                reason: format!("horizon must be positive and finite, got {}", self.horizon),
            });
        }
        if !(self.warmup >= 0.0 && self.warmup < self.horizon) {
            return Err(SimError::BadConfig {
                reason: format!(
                    "warmup {} must lie in [0, horizon = {})",
                    self.warmup, self.horizon
                ),
            });
        }
        if self.n_batches < 10 {
            return Err(SimError::TooFewBatches { got: self.n_batches });
        }
        Ok(())
    }
}

/// Time-average estimates with batch-means standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimEstimate {
    /// Estimated mean transactions in the block.
    pub block_mean: f64,
    /// Estimated mean transactions in the pool.
    pub pool_mean: f64,
    pub block_se: f64,
    pub pool_se: f64,
    /// Total events executed over the whole run.
    pub n_events: u64,
    /// Stability of the parameters under the throughput bound; unstable runs
    /// are permitted but flagged.
    pub params_stable: bool,
    pub config: SimConfig,
}

/// Sample mean and standard error of a batch-average series.
pub fn batch_means(series: &[f64]) -> Result<(f64, f64), SimError> {
    if series.len() < 10 {
        return Err(SimError::TooFewBatches { got: series.len() });
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let ss: f64 = series.iter().map(|x| (x - mean) * (x - mean)).sum();
    let se = (ss / (n - 1.0)).sqrt() / n.sqrt();
    Ok((mean, se))
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    // 53-bit mantissa uniform in [0, 1).
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Runs the event loop and returns time-averaged occupancy estimates.
///
/// The transition semantics match the truncated generator exactly, minus the
/// truncation: arrivals at rate `lambda`, block generation at rate `mu1` when
/// the block is empty and the pool is not, blockchain building at rate `mu2`
/// while a block is in progress. With `lambda = 0` the chain freezes at
/// (0,0) and the estimate is an exact zero with zero standard error.
pub fn simulate(params: &Params, config: &SimConfig) -> Result<SimEstimate, SimError> {
    params.validate()?;
    config.validate()?;
    let span = config.horizon - config.warmup;
    if !(span > 0.0) {
        return Err(SimError::DegenerateRun);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let batch_width = span / config.n_batches as f64;
    let mut block_integral = vec![0.0f64; config.n_batches];
    let mut pool_integral = vec![0.0f64; config.n_batches];

    // Adds `value * dt` over [t0, t1), split across batch boundaries.
    let mut accumulate = |t0: f64, t1: f64, block: u32, pool: u32| {
        let a = t0.max(config.warmup);
        let b = t1.min(config.horizon);
        if b <= a {
            return;
        }
        let mut left = a;
        while left < b {
            let k = (((left - config.warmup) / batch_width) as usize).min(config.n_batches - 1);
            let batch_end = config.warmup + (k + 1) as f64 * batch_width;
            let right = b.min(batch_end);
            let dt = right - left;
            block_integral[k] += block as f64 * dt;
            pool_integral[k] += pool as f64 * dt;
            if right <= left {
                break; // boundary rounding guard
            }
            left = right;
        }
    };

    let mut t = 0.0f64;
    let mut block = 0u32;
    let mut pool = 0u32;
    let mut n_events = 0u64;
    while t < config.horizon {
        let mine_rate = if block == 0 && pool >= 1 { params.mu1 } else { 0.0 };
        let build_rate = if block >= 1 { params.mu2 } else { 0.0 };
        let total = params.lambda + mine_rate + build_rate;
        if total == 0.0 {
            accumulate(t, config.horizon, block, pool);
            break;
        }
        let dt = -(1.0 - uniform(&mut rng)).ln() / total;
        let next = t + dt;
        accumulate(t, next, block, pool);
        if next >= config.horizon {
            break;
        }
        t = next;
        let pick = uniform(&mut rng) * total;
        if pick < params.lambda {
            pool += 1;
        } else if pick < params.lambda + mine_rate {
            let claimed = pool.min(params.b);
            block = claimed;
            pool -= claimed;
        } else {
            block = 0;
        }
        n_events += 1;
    }

    let block_avgs: Vec<f64> = block_integral.iter().map(|v| v / batch_width).collect();
    let pool_avgs: Vec<f64> = pool_integral.iter().map(|v| v / batch_width).collect();
    let (block_mean, block_se) = batch_means(&block_avgs)?;
    let (pool_mean, pool_se) = batch_means(&pool_avgs)?;

    Ok(SimEstimate {
        block_mean,
        pool_mean,
        block_se,
        pool_se,
        n_events,
        params_stable: params.stability().stable,
        config: *config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn batch_means_constant_series() {
        let (mean, se) = batch_means(&[3.25; 12]).unwrap();
        assert_eq!(mean, 3.25);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn batch_means_alternating_series() {
        // {0,1} repeated five times: mean 0.5, se = sqrt(10/36)/sqrt(10) = 1/6.
        let series: Vec<f64> = (0..10).map(|k| (k % 2) as f64).collect();
        let (mean, se) = batch_means(&series).unwrap();
        assert_abs_diff_eq!(mean, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(se, 1.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn batch_means_rejects_short_series() {
        assert!(matches!(
            batch_means(&[1.0; 9]),
            Err(SimError::TooFewBatches { got: 9 })
        ));
    }

    #[test]
    fn config_validation() {
        let mut c = SimConfig::new(100.0, 1);
        assert!(c.validate().is_ok());
        c.warmup = 100.0;
        assert!(matches!(c.validate(), Err(SimError::BadConfig { .. })));
        let mut c = SimConfig::new(100.0, 1);
        c.n_batches = 9;
        assert!(matches!(c.validate(), Err(SimError::TooFewBatches { got: 9 })));
    }

    #[test]
    fn zero_arrivals_give_exact_zero_estimates() {
        let params = Params::new(0.0, 2.0, 3.0, 5).unwrap();
        let est = simulate(&params, &SimConfig::new(100.0, 7)).unwrap();
        assert_eq!(est.block_mean, 0.0);
        assert_eq!(est.pool_mean, 0.0);
        assert_eq!(est.block_se, 0.0);
        assert_eq!(est.pool_se, 0.0);
        assert_eq!(est.n_events, 0);
    }

    #[test]
    fn fixed_seed_is_bit_reproducible() {
        let params = Params::new(1.5, 2.0, 2.0, 10).unwrap();
        let config = SimConfig::new(5_000.0, 42);
        let a = simulate(&params, &config).unwrap();
        let b = simulate(&params, &config).unwrap();
        assert_eq!(a, b);
        let c = simulate(&params, &SimConfig { seed: 43, ..config }).unwrap();
        assert_ne!(a.block_mean, c.block_mean);
    }

    #[test]
    fn estimates_stay_in_range() {
        let params = Params::new(1.5, 2.0, 2.0, 10).unwrap();
        let est = simulate(&params, &SimConfig::new(20_000.0, 3)).unwrap();
        assert!(est.block_mean >= 0.0 && est.block_mean <= 10.0);
        assert!(est.pool_mean >= 0.0);
        assert!(est.block_se >= 0.0 && est.pool_se >= 0.0);
        assert!(est.params_stable);
        assert!(est.n_events > 0);
    }

    #[test]
    fn unstable_run_is_flagged() {
        let params = Params::new(2.0, 2.0, 2.0, 1).unwrap();
        let est = simulate(&params, &SimConfig::new(1_000.0, 5)).unwrap();
        assert!(!est.params_stable);
        // Pool grows roughly linearly at rate lambda - bound = 1.
        assert!(est.pool_mean > 10.0);
    }
}
