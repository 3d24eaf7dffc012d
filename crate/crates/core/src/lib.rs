//! Exact and approximate steady-state analysis of a two-stage blockchain
//! queueing system.
//!
//! The model: transactions arrive in a Poisson stream at rate `lambda` and
//! wait in an unbounded transaction pool. When no block is in progress,
//! block generation completes at rate `mu1` and claims up to `b` pooled
//! transactions; the resulting block is pegged to the chain at rate `mu2`,
//! after which generation can start again. The state `(i, j)` tracks the
//! transactions in the in-progress block and in the pool.
//!
//! Three independent routes to the stationary behaviour live here:
//!
//! - [`exact`]: a level-truncated sparse generator and stationary solve,
//!   with an automatic truncation search;
//! - [`sim`]: a discrete-event simulation of the identical dynamics with
//!   batch-means confidence intervals;
//! - [`maxent`]: the entropy-maximizing product form `x * y^i * z^j` fitted
//!   to the mean occupancies, plus entropy and divergence diagnostics. It
//!   takes only `(I, J, b)` as input, so it applies unchanged to measured
//!   moments from systems that are not Poisson/exponential at all.
//!
//! [`model`] holds the shared parameter types and the stability test
//! `b * mu1 * mu2 / (mu1 + mu2) > lambda`.
//!
//! Everything is a pure function over immutable values; parallel evaluation
//! over parameter points needs no coordination.

pub mod exact;
pub mod maxent;
pub mod model;
pub mod sim;

pub use exact::{
    auto_truncate, solve_stationary, BuildError, JointDistribution, SolveError, SolveOptions,
    SparseGenerator, Truncation, TruncateError, TruncateOptions,
};
pub use maxent::{
    constraint_residuals, entropy_closed_form, entropy_direct, kl_divergence,
    maxent_distribution, mean_block_given_y, solve_x, solve_y, solve_z, ConstraintResiduals,
    Degeneracy, KlReport, MaxEntError, MaxEntSolution,
};
pub use model::{Moments, ParamError, Params, StabilityReport, State};
pub use sim::{batch_means, simulate, SimConfig, SimError, SimEstimate};
