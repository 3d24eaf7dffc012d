//! Maximum-entropy product-form approximation of the stationary distribution.
//!
//! Given the mean block occupancy `I`, the mean pool occupancy `J`, and the
//! block capacity `b`, the entropy-maximizing distribution subject to
//! normalization and those two means is the product form
//!
//! ```text
//!     p(i, j) = x * y^i * z^j,      0 <= i <= b,  j >= 0,
//! ```
//!
//! with `z = J / (1 + J)`, `y` the unique positive root of the block mean
//! equation `m(y) = I` where `m(y) = sum(i * y^i) / sum(y^i)` over
//! `i = 0..=b`, and `x = (1 - z) / S_b(y)` the normalizing constant with
//! `S_b(y) = sum(y^i)`. The Lagrange multipliers of the underlying
//! constrained optimization are recovered as `beta0 = -1 - ln x`,
//! `beta1 = -ln y`, `beta2 = -ln z`.
//!
//! All power sums are evaluated with `y` (or `1/y` when `y > 1`, using the
//! reflection `i <-> b - i`) kept at or below one, so nothing overflows even
//! at large block capacities.

use serde::Serialize;
use thiserror::Error;

use crate::exact::JointDistribution;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MaxEntError {
    #[error("block mean {mean} is outside the open interval (0, {b}); the distribution is degenerate or infeasible")]
    DegenerateMean { mean: f64, b: u32 },
    #[error("pool mean must be finite and non-negative, got {mean}")]
    NegativeMean { mean: f64 },
    #[error("block capacity must be at least 1")]
    InvalidCapacity,
    #[error("exact distribution has mass {mass:e} at ({block},{pool}) where the approximation is zero")]
    SupportMismatch { block: u32, pool: u32, mass: f64 },
    #[error("block capacity mismatch: exact table has b={exact}, solution has b={solution}")]
    ShapeMismatch { exact: u32, solution: u32 },
}

/// Residuals of the three defining constraints, all computed from closed-form
/// sums (no truncation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstraintResiduals {
    /// `|x * S_b(y) / (1 - z) - 1|`
    pub normalization: f64,
    /// `|m(y) - I|`
    pub block_mean: f64,
    /// `|z / (1 - z) - J|`
    pub pool_mean: f64,
}

impl ConstraintResiduals {
    pub fn max(&self) -> f64 {
        self.normalization.max(self.block_mean).max(self.pool_mean)
    }
}

/// Which coordinates collapsed to a point mass. `I = 0`, `I = b`, and `J = 0`
/// are handled as explicit degenerate solutions instead of failing; the
/// product form then holds in the limit (`y -> 0`, `y -> inf`, `z = 0`).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Degeneracy {
    pub block_empty: bool,
    pub block_full: bool,
    pub pool_empty: bool,
}

impl Degeneracy {
    pub fn any(&self) -> bool {
        self.block_empty || self.block_full || self.pool_empty
    }
}

/// The fitted product form plus diagnostics.
///
/// Degenerate encodings: `y = 0` with `block_empty` (point mass at `i = 0`),
/// `y = inf` with `block_full` (point mass at `i = b`, where `x = 0` is the
/// correct limit of `(1-z)/S_b(y)`), and `z = 0` with `pool_empty`. The pmf
/// accessors handle all three.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxEntSolution {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Input block mean `I`.
    pub block_mean: f64,
    /// Input pool mean `J`.
    pub pool_mean: f64,
    pub b: u32,
    pub residuals: ConstraintResiduals,
    /// Root-finder iterations spent on `y`.
    pub iterations: u32,
    pub degeneracy: Degeneracy,
}

impl MaxEntSolution {
    /// Marginal probability of `i` transactions in the block.
    pub fn block_pmf(&self, i: u32) -> f64 {
        debug_assert!(i <= self.b);
        if self.degeneracy.block_empty {
            return if i == 0 { 1.0 } else { 0.0 };
        }
        if self.degeneracy.block_full {
            return if i == self.b { 1.0 } else { 0.0 };
        }
        if self.y <= 1.0 {
            self.y.powi(i as i32) / sum_powers(self.y, self.b)
        } else {
            let r = self.y.recip();
            r.powi((self.b - i) as i32) / sum_powers(r, self.b)
        }
    }

    /// Marginal probability of `j` transactions in the pool (geometric).
    pub fn pool_pmf(&self, j: u32) -> f64 {
        if self.z == 0.0 {
            return if j == 0 { 1.0 } else { 0.0 };
        }
        (1.0 - self.z) * self.z.powi(j as i32)
    }

    /// Joint probability `p(i, j) = x * y^i * z^j`, evaluated through the
    /// normalized marginals so it stays finite in the degenerate limits.
    pub fn prob(&self, block: u32, pool: u32) -> f64 {
        self.block_pmf(block) * self.pool_pmf(pool)
    }

    /// Tabulates the product form on the truncated grid `j <= pool_cap`,
    /// renormalized to sum to one.
    pub fn tabulate(&self, pool_cap: u32) -> JointDistribution {
        let width = self.b as usize + 1;
        let mut probs = vec![0.0; width * (pool_cap as usize + 1)];
        for j in 0..=pool_cap {
            let pj = self.pool_pmf(j);
            for i in 0..=self.b {
                probs[(j * (self.b + 1) + i) as usize] = self.block_pmf(i) * pj;
            }
        }
        JointDistribution::from_unnormalized(self.b, pool_cap, probs)
    }

    /// Shannon entropy of the (untruncated) product form; see
    /// [`entropy_closed_form`].
    pub fn entropy(&self) -> f64 {
        entropy_closed_form(self)
    }
}

/// `S_b(y) = sum_{i=0}^{b} y^i` for `y <= 1` (callers reflect larger `y`).
fn sum_powers(y: f64, b: u32) -> f64 {
    debug_assert!((0.0..=1.0).contains(&y));
    let mut sum = 0.0;
    let mut t = 1.0;
    for _ in 0..=b {
        sum += t;
        t *= y;
    }
    sum
}

/// Mean and variance of the block pmf `w_i ~ y^i`, for `y` in `(0, 1]`.
fn mean_var_core(y: f64, b: u32) -> (f64, f64) {
    debug_assert!(y > 0.0 && y <= 1.0);
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    let mut t = 1.0;
    for i in 0..=b {
        let fi = i as f64;
        s0 += t;
        s1 += fi * t;
        s2 += fi * fi * t;
        t *= y;
    }
    let mean = s1 / s0;
    let var = (s2 / s0 - mean * mean).max(0.0);
    (mean, var)
}

fn mean_core(y: f64, b: u32) -> f64 {
    mean_var_core(y, b).0
}

/// `ln S_b(y)` for any `y >= 0`, overflow-safe.
fn ln_sum_powers(y: f64, b: u32) -> f64 {
    if y <= 1.0 {
        sum_powers(y, b).ln()
    } else {
        b as f64 * y.ln() + sum_powers(y.recip(), b).ln()
    }
}

/// Mean of the block pmf induced by the ratio `y`:
/// `m(y) = (sum i y^i) / (sum y^i)` over `i = 0..=b`.
///
/// Strictly increasing in `y`, with `m(0+) = 0`, `m(1) = b/2` (returned as
/// the exact limit, not a 0/0 evaluation), and `m(y) -> b` as `y -> inf`.
/// Large `y` is evaluated through the reflection `m(y) = b - m(1/y)`.
pub fn mean_block_given_y(y: f64, b: u32) -> f64 {
    debug_assert!(y >= 0.0);
    if y == 0.0 {
        0.0
    } else if y == 1.0 {
        b as f64 / 2.0
    } else if y > 1.0 {
        b as f64 - mean_core(y.recip(), b)
    } else {
        mean_core(y, b)
    }
}

/// Solves the block-mean equation `m(y) = block_mean` for the unique `y > 0`.
///
/// Requires `0 < block_mean < b`; the endpoints have no positive root (the
/// caller gets the degenerate point-mass solutions from
/// [`maxent_distribution`] instead). Returns `y < 1`, `= 1`, `> 1` according
/// to `block_mean` below, at, or above `b/2`; means above `b/2` are solved on
/// the mirrored problem and inverted, which keeps every power sum bounded.
pub fn solve_y(block_mean: f64, b: u32, tol: f64) -> Result<f64, MaxEntError> {
    solve_y_iter(block_mean, b, tol).map(|(y, _)| y)
}

pub(crate) fn solve_y_iter(block_mean: f64, b: u32, tol: f64) -> Result<(f64, u32), MaxEntError> {
    if b < 1 {
        return Err(MaxEntError::InvalidCapacity);
    }
    let bf = b as f64;
    if !block_mean.is_finite() || block_mean <= 0.0 || block_mean >= bf {
        return Err(MaxEntError::DegenerateMean { mean: block_mean, b });
    }
    if 2.0 * block_mean == bf {
        return Ok((1.0, 0));
    }
    if block_mean > bf / 2.0 {
        let (mirror, iters) = solve_core(bf - block_mean, b, tol);
        return Ok((mirror.recip(), iters));
    }
    Ok(solve_core(block_mean, b, tol))
}

/// Bracketed bisection plus safeguarded Newton polish on `m(y) = target`
/// for `target` in `(0, b/2)`; the root lies in `(0, 1)`.
fn solve_core(target: f64, b: u32, tol: f64) -> (f64, u32) {
    let mut iters = 0u32;
    let mut lo;
    let mut hi = 1.0_f64;
    let mut probe = 0.5_f64;
    loop {
        iters += 1;
        if mean_core(probe, b) <= target {
            lo = probe;
            break;
        }
        hi = probe;
        probe *= 0.5;
        if probe < 1e-300 {
            return (probe, iters); // target vanishingly small; y ~ target
        }
    }

    while hi - lo > 1e-6 * hi {
        iters += 1;
        let mid = 0.5 * (lo + hi);
        if mean_core(mid, b) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    // Newton with m'(y) = var(y) / y, bisecting whenever the step leaves the
    // bracket. After the tolerance is met, two extra steps push the residual
    // to the floating-point floor (the consistency checks downstream want
    // essentially exact roots).
    let tol_eff = tol * target.max(1.0);
    let mut y = 0.5 * (lo + hi);
    let mut polish = 0u32;
    for _ in 0..64 {
        iters += 1;
        let (m, var) = mean_var_core(y, b);
        let f = m - target;
        if f > 0.0 {
            hi = y;
        } else {
            lo = y;
        }
        if f.abs() <= tol_eff {
            polish += 1;
            if polish > 2 {
                break;
            }
        }
        let mut next = y - f * y / var.max(f64::MIN_POSITIVE);
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if next == y {
            break;
        }
        y = next;
    }
    (y, iters)
}

/// `z = J / (1 + J)`, the geometric ratio matching pool mean `J >= 0`.
pub fn solve_z(pool_mean: f64) -> Result<f64, MaxEntError> {
    if !pool_mean.is_finite() || pool_mean < 0.0 {
        return Err(MaxEntError::NegativeMean { mean: pool_mean });
    }
    Ok(pool_mean / (1.0 + pool_mean))
}

/// Normalizing constant `x = (1 - z) / S_b(y)`, which equals the closed form
/// `(1 - y)(1 - z) / (1 - y^{b+1})` for `y != 1` and its limit `(1 - z)/(b+1)`
/// at `y = 1`.
pub fn solve_x(y: f64, z: f64, b: u32) -> f64 {
    debug_assert!(y >= 0.0 && (0.0..1.0).contains(&z));
    if y.is_infinite() {
        return 0.0; // block-full limit
    }
    if y <= 1.0 {
        (1.0 - z) / sum_powers(y, b)
    } else {
        (1.0 - z) * (-ln_sum_powers(y, b)).exp()
    }
}

/// Default relative tolerance for the `y` root.
pub const DEFAULT_Y_TOL: f64 = 1e-12;

/// Fits the product form to the mean pair `(block_mean, pool_mean)` for block
/// capacity `b`. Degenerate means (`I = 0`, `I = b`, `J = 0`) yield explicit
/// point-mass solutions flagged in [`MaxEntSolution::degeneracy`].
pub fn maxent_distribution(
    block_mean: f64,
    pool_mean: f64,
    b: u32,
) -> Result<MaxEntSolution, MaxEntError> {
    if b < 1 {
        return Err(MaxEntError::InvalidCapacity);
    }
    let bf = b as f64;
    if !block_mean.is_finite() || block_mean < 0.0 || block_mean > bf {
        return Err(MaxEntError::DegenerateMean { mean: block_mean, b });
    }
    let z = solve_z(pool_mean)?;

    let mut degeneracy = Degeneracy { pool_empty: z == 0.0, ..Degeneracy::default() };
    let (y, iterations) = if block_mean == 0.0 {
        degeneracy.block_empty = true;
        (0.0, 0)
    } else if block_mean == bf {
        degeneracy.block_full = true;
        (f64::INFINITY, 0)
    } else {
        solve_y_iter(block_mean, b, DEFAULT_Y_TOL)?
    };

    let x = solve_x(y, z, b);
    let mut solution = MaxEntSolution {
        x,
        y,
        z,
        beta0: -1.0 - x.ln(),
        beta1: -y.ln(),
        beta2: -z.ln(),
        block_mean,
        pool_mean,
        b,
        residuals: ConstraintResiduals { normalization: 0.0, block_mean: 0.0, pool_mean: 0.0 },
        iterations,
        degeneracy,
    };
    solution.residuals = constraint_residuals(&solution);
    Ok(solution)
}

/// Recomputes the constraint residuals of a solution from closed-form sums.
pub fn constraint_residuals(sol: &MaxEntSolution) -> ConstraintResiduals {
    let normalization = if sol.degeneracy.block_full {
        // x = 0 encodes the y -> inf limit; the pmf form is exactly normalized.
        0.0
    } else {
        // |x S_b(y) / (1-z) - 1| via logs so large b cannot overflow.
        let t = sol.x.ln() + ln_sum_powers(sol.y, sol.b) - (1.0 - sol.z).ln();
        t.exp_m1().abs()
    };
    let fitted_mean = if sol.degeneracy.block_empty {
        0.0
    } else if sol.degeneracy.block_full {
        sol.b as f64
    } else {
        mean_block_given_y(sol.y, sol.b)
    };
    let block_mean = (fitted_mean - sol.block_mean).abs();
    let pool_mean = (sol.z / (1.0 - sol.z) - sol.pool_mean).abs();
    ConstraintResiduals { normalization, block_mean, pool_mean }
}

/// Entropy of the untruncated product form.
///
/// Equals `-ln x - I ln y - J ln z` (terms with a zero coefficient dropped in
/// the degenerate limits), computed as the sum of the block-marginal and
/// pool-marginal entropies: the two coordinates are independent under the
/// product form.
pub fn entropy_closed_form(sol: &MaxEntSolution) -> f64 {
    let block = if sol.degeneracy.block_empty || sol.degeneracy.block_full {
        0.0
    } else if sol.y == 1.0 {
        ((sol.b + 1) as f64).ln()
    } else {
        // Entropy is invariant under the reflection i <-> b-i, so evaluate
        // on whichever of y, 1/y lies below one.
        let yc = if sol.y > 1.0 { sol.y.recip() } else { sol.y };
        let (mean, _) = mean_var_core(yc, sol.b);
        sum_powers(yc, sol.b).ln() - mean * yc.ln()
    };
    let pool = if sol.z == 0.0 {
        0.0
    } else {
        -(1.0 - sol.z).ln() - sol.z * sol.z.ln() / (1.0 - sol.z)
    };
    block + pool
}

/// Entropy `-sum p ln p` of a truncated table, with `0 ln 0 := 0`.
pub fn entropy_direct(dist: &JointDistribution) -> f64 {
    dist.probs()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}

/// Divergence of the exact table from the fitted product form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KlReport {
    /// `sum p ln(p / p~)` over the exact table's grid; non-negative up to
    /// rounding because the approximation is deficient on the grid.
    pub kl: f64,
    /// Boundary-row mass of the exact table.
    pub exact_tail_mass: f64,
    /// Product-form mass beyond the grid, `z^(pool_cap + 1)`.
    pub approx_tail_mass: f64,
}

/// Kullback-Leibler divergence `D(exact || approximation)` over the exact
/// table's truncated grid, with both tail masses reported so the caller can
/// judge truncation bias. This direction stays finite whenever the
/// approximation covers the exact support; the reverse direction would divide
/// by zero on truncated exact tables.
pub fn kl_divergence(
    exact: &JointDistribution,
    sol: &MaxEntSolution,
) -> Result<KlReport, MaxEntError> {
    if exact.b() != sol.b {
        return Err(MaxEntError::ShapeMismatch { exact: exact.b(), solution: sol.b });
    }
    let mut kl = 0.0;
    for j in 0..=exact.pool_cap() {
        for i in 0..=exact.b() {
            let p = exact.prob(i, j);
            if p == 0.0 {
                continue;
            }
            let q = sol.prob(i, j);
            if q == 0.0 {
                return Err(MaxEntError::SupportMismatch { block: i, pool: j, mass: p });
            }
            kl += p * (p.ln() - q.ln());
        }
    }
    let approx_tail_mass =
        if sol.z == 0.0 { 0.0 } else { sol.z.powi(exact.pool_cap() as i32 + 1) };
    Ok(KlReport { kl, exact_tail_mass: exact.tail_mass_estimate(), approx_tail_mass })
}
