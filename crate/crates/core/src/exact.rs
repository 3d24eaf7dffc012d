//! Level-truncated generator of the two-stage queue and its stationary
//! distribution.
//!
//! The pool coordinate is truncated at a finite level `pool_cap`; arrivals
//! that would push past the boundary are dropped, and the probability mass
//! sitting on the boundary row is reported as `tail_mass_estimate` so callers
//! can judge whether the truncation was large enough. [`auto_truncate`] wraps
//! the doubling search that picks the level automatically.
//!
//! States are enumerated row-major by pool level then block content:
//! `index = pool * (b + 1) + block`, which keeps the arrival transitions
//! block-banded.

use std::io::{self, Write};

use thiserror::Error;

use crate::model::{Moments, Params, State};

/// Relative tolerance on the moment pair between consecutive truncation
/// doublings before a level is accepted.
pub const MOMENT_REL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BuildError {
    #[error("truncation level {pool_cap} is smaller than the block capacity {b}")]
    TruncationTooSmall { pool_cap: u32, b: u32 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("stationary solve did not converge: residual {residual:e} after {sweeps} sweeps")]
    DidNotConverge { residual: f64, sweeps: usize },
    #[error("generator has {count} absorbing states; stationary distribution is not unique")]
    NotIrreducible { count: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TruncateError {
    #[error(
        "truncation search diverged at level {level} (unstable or near-boundary parameters); \
         last moment iterates: {prev:?} -> {last:?}"
    )]
    Diverged {
        level: u32,
        prev: Option<Moments>,
        last: Option<Moments>,
    },
}

/// One off-diagonal transition of the truncated chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub from: State,
    pub to: State,
    pub rate: f64,
}

/// Sparse infinitesimal generator of the truncated chain.
///
/// Every state has at most two outgoing transitions, so the generator is
/// stored as a flat arc list plus the diagonal (negative row sums).
#[derive(Debug, Clone)]
pub struct SparseGenerator {
    params: Params,
    pool_cap: u32,
    arcs: Vec<Arc>,
    diag: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Arc {
    from: u32,
    to: u32,
    rate: f64,
}

impl SparseGenerator {
    /// Builds the generator for `params` truncated at pool level `pool_cap`.
    ///
    /// Transitions encoded, with `b` the block capacity:
    /// - arrival: `(i, j) -> (i, j+1)` at rate `lambda`, suppressed at the
    ///   truncation boundary `j = pool_cap`;
    /// - block generation: `(0, j) -> (min(j, b), j - min(j, b))` at rate
    ///   `mu1`, enabled only when `j >= 1` (no zero-transaction blocks);
    /// - blockchain building: `(i, j) -> (0, j)` at rate `mu2` for `i >= 1`.
    ///
    /// Stability is not checked here; unstable parameters are legitimate for
    /// exploratory solves (the boundary mass then stays large). Callers that
    /// need the stability gate apply it before building, as the CLI does.
    pub fn build(params: Params, pool_cap: u32) -> Result<Self, BuildError> {
        if pool_cap < params.b {
            return Err(BuildError::TruncationTooSmall { pool_cap, b: params.b });
        }
        let width = params.b as usize + 1;
        let n = width * (pool_cap as usize + 1);
        let index = |i: u32, j: u32| -> u32 { j * (params.b + 1) + i };

        let mut arcs = Vec::with_capacity(2 * n);
        let mut diag = vec![0.0; n];
        for j in 0..=pool_cap {
            for i in 0..=params.b {
                let from = index(i, j);
                let mut out = 0.0;
                if j < pool_cap && params.lambda > 0.0 {
                    arcs.push(Arc { from, to: index(i, j + 1), rate: params.lambda });
                    out += params.lambda;
                }
                if i == 0 && j >= 1 {
                    let claimed = j.min(params.b);
                    arcs.push(Arc { from, to: index(claimed, j - claimed), rate: params.mu1 });
                    out += params.mu1;
                }
                if i >= 1 {
                    arcs.push(Arc { from, to: index(0, j), rate: params.mu2 });
                    out += params.mu2;
                }
                diag[from as usize] = -out;
            }
        }
        Ok(SparseGenerator { params, pool_cap, arcs, diag })
    }

    pub fn n_states(&self) -> usize {
        self.diag.len()
    }

    pub fn pool_cap(&self) -> u32 {
        self.pool_cap
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn index(&self, state: State) -> usize {
        debug_assert!(state.block <= self.params.b && state.pool <= self.pool_cap);
        (state.pool * (self.params.b + 1) + state.block) as usize
    }

    pub fn state_of(&self, index: usize) -> State {
        let width = self.params.b as usize + 1;
        State { block: (index % width) as u32, pool: (index / width) as u32 }
    }

    /// Off-diagonal transitions in construction order.
    pub fn transitions(&self) -> impl Iterator<Item = Transition> + '_ {
        self.arcs.iter().map(|a| Transition {
            from: self.state_of(a.from as usize),
            to: self.state_of(a.to as usize),
            rate: a.rate,
        })
    }

    pub fn diagonal(&self, state: State) -> f64 {
        self.diag[self.index(state)]
    }

    /// Debug dump as one `row col rate` triplet per line, states written as
    /// `block:pool`. Used by tests only.
    pub fn dump_triplets(&self, w: &mut impl Write) -> io::Result<()> {
        for t in self.transitions() {
            writeln!(
                w,
                "{}:{} {}:{} {}",
                t.from.block, t.from.pool, t.to.block, t.to.pool, t.rate
            )?;
        }
        Ok(())
    }

    /// Raw triplet view over flat state indices, diagonal included.
    /// Convenient for feeding an external linear solver.
    pub fn flat_entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out: Vec<(usize, usize, f64)> = self
            .arcs
            .iter()
            .map(|a| (a.from as usize, a.to as usize, a.rate))
            .collect();
        for (s, d) in self.diag.iter().enumerate() {
            if *d != 0.0 {
                out.push((s, s, *d));
            }
        }
        out
    }

    #[cfg(test)]
    fn from_parts(params: Params, pool_cap: u32, arcs: Vec<Arc>, diag: Vec<f64>) -> Self {
        SparseGenerator { params, pool_cap, arcs, diag }
    }
}

/// A truncated joint probability table over states `(i, j)`,
/// `0 <= i <= b`, `0 <= j <= pool_cap`, stored row-major by pool level.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    b: u32,
    pool_cap: u32,
    probs: Vec<f64>,
    tail_mass_estimate: f64,
}

impl JointDistribution {
    /// Normalizes a raw non-negative table into a distribution. Entries more
    /// negative than rounding scrap are a caller bug.
    pub fn from_unnormalized(b: u32, pool_cap: u32, mut probs: Vec<f64>) -> Self {
        let width = b as usize + 1;
        assert_eq!(probs.len(), width * (pool_cap as usize + 1), "table shape mismatch");
        for p in &mut probs {
            debug_assert!(*p > -1e-12, "negative probability entry {p}");
            if *p < 0.0 {
                *p = 0.0;
            }
        }
        let total: f64 = probs.iter().sum();
        assert!(total > 0.0 && total.is_finite(), "cannot normalize this table");
        for p in &mut probs {
            *p /= total;
        }
        let tail = probs[width * pool_cap as usize..].iter().sum();
        JointDistribution { b, pool_cap, probs, tail_mass_estimate: tail }
    }

    pub fn b(&self) -> u32 {
        self.b
    }

    pub fn pool_cap(&self) -> u32 {
        self.pool_cap
    }

    /// Probability of `block` transactions in the block and `pool` in the pool.
    pub fn prob(&self, block: u32, pool: u32) -> f64 {
        debug_assert!(block <= self.b && pool <= self.pool_cap);
        self.probs[(pool * (self.b + 1) + block) as usize]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Total probability sitting on the truncation boundary row.
    pub fn tail_mass_estimate(&self) -> f64 {
        self.tail_mass_estimate
    }

    /// Mean transactions in the block and in the pool.
    pub fn moments(&self) -> Moments {
        let width = self.b as usize + 1;
        let mut block_mean = 0.0;
        let mut pool_mean = 0.0;
        for j in 0..=self.pool_cap as usize {
            let row = &self.probs[j * width..(j + 1) * width];
            let mut row_sum = 0.0;
            for (i, p) in row.iter().enumerate() {
                block_mean += i as f64 * p;
                row_sum += p;
            }
            pool_mean += j as f64 * row_sum;
        }
        Moments { block_mean, pool_mean }
    }

    /// Marginal distributions over the block and pool coordinates.
    pub fn marginals(&self) -> (Vec<f64>, Vec<f64>) {
        let width = self.b as usize + 1;
        let mut block = vec![0.0; width];
        let mut pool = vec![0.0; self.pool_cap as usize + 1];
        for (j, pj) in pool.iter_mut().enumerate() {
            for (i, bi) in block.iter_mut().enumerate() {
                let p = self.probs[j * width + i];
                *bi += p;
                *pj += p;
            }
        }
        (block, pool)
    }
}

/// Knobs for the stationary solve.
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Max-norm bound on the residual `pi * Q` of the returned distribution.
    pub residual_tol: f64,
    /// Hard cap on Gauss-Seidel sweeps before giving up.
    pub max_sweeps: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { residual_tol: 1e-10, max_sweeps: 20_000 }
    }
}

/// Solves `pi * Q = 0`, `sum(pi) = 1` for the truncated chain by symmetric
/// Gauss-Seidel on the balance equations. All iterates stay non-negative, and
/// the residual contract is checked explicitly before returning.
pub fn solve_stationary(
    gen: &SparseGenerator,
    opts: &SolveOptions,
) -> Result<JointDistribution, SolveError> {
    let n = gen.n_states();
    let outflow: Vec<f64> = gen.diag.iter().map(|d| -d).collect();

    // A state with zero outflow is absorbing. The only such state `build`
    // can produce is (0,0) when lambda = 0, where the whole chain drains and
    // the stationary distribution is the point mass on it; a single-state
    // chain is the same case.
    let absorbing: Vec<usize> = (0..n).filter(|&s| outflow[s] == 0.0).collect();
    if !absorbing.is_empty() {
        if absorbing.len() > 1 {
            return Err(SolveError::NotIrreducible { count: absorbing.len() });
        }
        let mut probs = vec![0.0; n];
        probs[absorbing[0]] = 1.0;
        return Ok(JointDistribution::from_unnormalized(gen.params.b, gen.pool_cap, probs));
    }

    // Incoming adjacency in CSR form: incoming[off[s]..off[s+1]] lists
    // (source, rate) pairs for transitions into s.
    let mut off = vec![0usize; n + 1];
    for a in &gen.arcs {
        off[a.to as usize + 1] += 1;
    }
    for s in 0..n {
        off[s + 1] += off[s];
    }
    let mut incoming = vec![(0u32, 0.0f64); gen.arcs.len()];
    let mut cursor = off.clone();
    for a in &gen.arcs {
        incoming[cursor[a.to as usize]] = (a.from, a.rate);
        cursor[a.to as usize] += 1;
    }

    let inflow = |pi: &[f64], s: usize| -> f64 {
        incoming[off[s]..off[s + 1]]
            .iter()
            .map(|&(u, r)| pi[u as usize] * r)
            .sum()
    };

    let mut pi = vec![1.0 / n as f64; n];
    let check_every = 8;
    let mut sweeps = 0;
    let mut residual = f64::INFINITY;
    while sweeps < opts.max_sweeps {
        for s in 0..n {
            pi[s] = inflow(&pi, s) / outflow[s];
        }
        for s in (0..n).rev() {
            pi[s] = inflow(&pi, s) / outflow[s];
        }
        sweeps += 1;
        let total: f64 = pi.iter().sum();
        for p in &mut pi {
            *p /= total;
        }
        if sweeps % check_every == 0 || sweeps == opts.max_sweeps {
            residual = (0..n)
                .map(|s| (inflow(&pi, s) - pi[s] * outflow[s]).abs())
                .fold(0.0, f64::max);
            if residual <= opts.residual_tol {
                return Ok(JointDistribution::from_unnormalized(
                    gen.params.b,
                    gen.pool_cap,
                    pi,
                ));
            }
        }
    }
    Err(SolveError::DidNotConverge { residual, sweeps })
}

/// Result of the automatic truncation search.
#[derive(Debug, Clone)]
pub struct Truncation {
    /// The accepted truncation level.
    pub level: u32,
    /// The stationary distribution solved at that level.
    pub distribution: JointDistribution,
    /// Its moments.
    pub moments: Moments,
}

/// Options for [`auto_truncate`].
#[derive(Debug, Clone, Copy)]
pub struct TruncateOptions {
    /// Accept a level once the boundary-row mass is at most this.
    pub tail_eps: f64,
    /// Override the starting level (default `max(4b, 64)`).
    pub start_level: Option<u32>,
    /// Give up (report divergence) once the level would exceed this.
    pub max_level: u32,
    pub solve: SolveOptions,
}

impl Default for TruncateOptions {
    fn default() -> Self {
        TruncateOptions {
            tail_eps: 1e-10,
            start_level: None,
            max_level: 8192,
            solve: SolveOptions::default(),
        }
    }
}

/// Doubling search for the smallest tested truncation level whose boundary
/// mass is below `tail_eps` and whose moments move by less than
/// [`MOMENT_REL_TOL`] (relative) when the level is doubled once more.
///
/// Unstable or near-boundary parameters never meet the criteria; the search
/// then stops at `max_level` and reports the last two moment iterates. A
/// solver failure at some level is treated the same way.
pub fn auto_truncate(params: &Params, opts: &TruncateOptions) -> Result<Truncation, TruncateError> {
    let start = opts.start_level.unwrap_or_else(|| (4 * params.b).max(64)).max(params.b);

    let solve_level = |level: u32| -> Option<(JointDistribution, Moments)> {
        let gen = SparseGenerator::build(*params, level).ok()?;
        let dist = solve_stationary(&gen, &opts.solve).ok()?;
        let moments = dist.moments();
        Some((dist, moments))
    };

    let mut level = start;
    let mut current = solve_level(level);
    let mut prev_moments: Option<Moments> = None;
    loop {
        let next_level = match level.checked_mul(2) {
            Some(v) if v <= opts.max_level => v,
            _ => {
                return Err(TruncateError::Diverged {
                    level,
                    prev: prev_moments,
                    last: current.map(|(_, m)| m),
                })
            }
        };
        let next = solve_level(next_level);
        if let (Some((dist, m)), Some((_, m_next))) = (&current, &next) {
            if dist.tail_mass_estimate() <= opts.tail_eps
                && rel_close(m.block_mean, m_next.block_mean)
                && rel_close(m.pool_mean, m_next.pool_mean)
            {
                let (distribution, moments) = current.unwrap();
                return Ok(Truncation { level, distribution, moments });
            }
        }
        prev_moments = current.map(|(_, m)| m);
        level = next_level;
        current = next;
    }
}

fn rel_close(a: f64, b: f64) -> bool {
    (a - b).abs() < MOMENT_REL_TOL * a.abs().max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params(lambda: f64, mu1: f64, mu2: f64, b: u32) -> Params {
        Params::new(lambda, mu1, mu2, b).unwrap()
    }

    fn outgoing(gen: &SparseGenerator, from: State) -> Vec<(State, f64)> {
        gen.transitions()
            .filter(|t| t.from == from)
            .map(|t| (t.to, t.rate))
            .collect()
    }

    #[test]
    fn rejects_truncation_below_block_capacity() {
        let err = SparseGenerator::build(params(1.0, 2.0, 2.0, 4), 3).unwrap_err();
        assert!(matches!(err, BuildError::TruncationTooSmall { pool_cap: 3, b: 4 }));
    }

    #[test]
    fn transition_rules_small_case() {
        // b=1, cap=2: state (0,1) fires the arrival to (0,2) and a mining
        // event to (1,0).
        let gen = SparseGenerator::build(params(0.7, 2.0, 3.0, 1), 2).unwrap();
        let mut out = outgoing(&gen, State { block: 0, pool: 1 });
        out.sort_by_key(|(s, _)| (s.block, s.pool));
        assert_eq!(
            out,
            vec![
                (State { block: 0, pool: 2 }, 0.7),
                (State { block: 1, pool: 0 }, 2.0),
            ]
        );
        assert_eq!(gen.diagonal(State { block: 0, pool: 1 }), -2.7);
    }

    #[test]
    fn boundary_suppresses_arrivals() {
        // b=2, cap=5: (0,5) only mines a full block to (2,3).
        let gen = SparseGenerator::build(params(1.0, 2.0, 3.0, 2), 5).unwrap();
        let out = outgoing(&gen, State { block: 0, pool: 5 });
        assert_eq!(out, vec![(State { block: 2, pool: 3 }, 2.0)]);
    }

    #[test]
    fn partial_block_claims_whole_pool() {
        // b=5, pool j=3 < b: mining moves all 3 into the block.
        let gen = SparseGenerator::build(params(1.0, 2.0, 3.0, 5), 20).unwrap();
        let out = outgoing(&gen, State { block: 0, pool: 3 });
        assert!(out.contains(&(State { block: 3, pool: 0 }, 2.0)));
    }

    #[test]
    fn building_resets_block_keeping_pool() {
        let gen = SparseGenerator::build(params(1.0, 2.0, 3.0, 2), 5).unwrap();
        let out = outgoing(&gen, State { block: 2, pool: 4 });
        assert!(out.contains(&(State { block: 0, pool: 4 }, 3.0)));
    }

    #[test]
    fn rows_sum_to_zero_across_grid() {
        for (lambda, mu1, mu2, b, cap) in [
            (0.0, 1.0, 1.0, 1, 1),
            (0.5, 2.0, 2.0, 1, 10),
            (1.5, 2.0, 2.0, 10, 40),
            (3.0, 6.0, 2.0, 8, 32),
        ] {
            let gen = SparseGenerator::build(params(lambda, mu1, mu2, b), cap).unwrap();
            let mut row_sums = gen.diag.clone();
            for a in &gen.arcs {
                assert!(a.rate >= 0.0);
                assert!((a.to as usize) < gen.n_states());
                row_sums[a.from as usize] += a.rate;
            }
            for (s, sum) in row_sums.iter().enumerate() {
                assert!(
                    sum.abs() <= 1e-12,
                    "row {s} sums to {sum} for lambda={lambda} b={b}"
                );
            }
        }
    }

    #[test]
    fn dump_triplets_format() {
        let gen = SparseGenerator::build(params(0.7, 2.0, 3.0, 1), 1).unwrap();
        let mut buf = Vec::new();
        gen.dump_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().any(|l| l == "0:1 1:0 2"));
        assert!(text.lines().all(|l| l.split_whitespace().count() == 3));
    }

    #[test]
    fn stationary_residual_and_positivity() {
        let gen = SparseGenerator::build(params(0.5, 2.0, 2.0, 1), 200).unwrap();
        let dist = solve_stationary(&gen, &SolveOptions::default()).unwrap();
        assert!(dist.probs().iter().all(|&p| p >= 0.0));
        assert_abs_diff_eq!(dist.probs().iter().sum::<f64>(), 1.0, epsilon = 1e-10);
        assert!(dist.tail_mass_estimate() < 1e-10);
    }

    #[test]
    fn unstable_system_piles_mass_on_boundary() {
        // bound = 1*2*2/4 = 1 < lambda = 2.
        let gen = SparseGenerator::build(params(2.0, 2.0, 2.0, 1), 20).unwrap();
        let dist = solve_stationary(&gen, &SolveOptions::default()).unwrap();
        assert!(dist.tail_mass_estimate() > 1e-6);
    }

    #[test]
    fn single_state_chain_is_point_mass() {
        // Forced shape that `build` would reject: a 1x1 state space.
        let degenerate = Params { lambda: 0.0, mu1: 1.0, mu2: 1.0, b: 0 };
        let single = SparseGenerator::from_parts(degenerate, 0, Vec::new(), vec![0.0]);
        let dist = solve_stationary(&single, &SolveOptions::default()).unwrap();
        assert_eq!(dist.probs(), &[1.0]);
    }

    #[test]
    fn zero_arrivals_drain_to_origin() {
        let gen = SparseGenerator::build(params(0.0, 2.0, 3.0, 2), 6).unwrap();
        let dist = solve_stationary(&gen, &SolveOptions::default()).unwrap();
        assert_eq!(dist.prob(0, 0), 1.0);
        let m = dist.moments();
        assert_eq!(m.block_mean, 0.0);
        assert_eq!(m.pool_mean, 0.0);
    }

    #[test]
    fn moments_of_uniform_block_row() {
        // Uniform over i in {0..b} at j=0: block mean b/2, pool mean 0.
        let b = 6u32;
        let cap = 6u32;
        let width = b as usize + 1;
        let mut probs = vec![0.0; width * (cap as usize + 1)];
        for p in probs.iter_mut().take(width) {
            *p = 1.0;
        }
        let dist = JointDistribution::from_unnormalized(b, cap, probs);
        let m = dist.moments();
        assert_abs_diff_eq!(m.block_mean, 3.0, epsilon = 1e-12);
        assert_eq!(m.pool_mean, 0.0);
    }

    #[test]
    fn marginals_sum_to_one_and_match_moments() {
        let gen = SparseGenerator::build(params(1.5, 2.0, 2.0, 10), 64).unwrap();
        let dist = solve_stationary(&gen, &SolveOptions::default()).unwrap();
        let (block, pool) = dist.marginals();
        assert_abs_diff_eq!(block.iter().sum::<f64>(), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(pool.iter().sum::<f64>(), 1.0, epsilon = 1e-10);
        let m = dist.moments();
        let from_marginal: f64 = block.iter().enumerate().map(|(i, p)| i as f64 * p).sum();
        assert_abs_diff_eq!(from_marginal, m.block_mean, epsilon = 1e-12);
    }

    #[test]
    fn point_mass_marginals_are_unit_vectors() {
        let mut probs = vec![0.0; 3 * 4];
        probs[0] = 1.0;
        let dist = JointDistribution::from_unnormalized(2, 3, probs);
        let (block, pool) = dist.marginals();
        assert_eq!(block, vec![1.0, 0.0, 0.0]);
        assert_eq!(pool, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn auto_truncate_reference_point() {
        let t = auto_truncate(&params(1.5, 2.0, 2.0, 10), &TruncateOptions::default()).unwrap();
        // Doubling search starts at max(4b, 64) = 64, which already meets
        // both criteria at this mild load.
        assert_eq!(t.level, 64);
        assert!(t.distribution.tail_mass_estimate() <= 1e-10);
        assert!(t.moments.block_mean > 0.0 && t.moments.block_mean <= 10.0);
    }

    #[test]
    fn auto_truncate_zero_load_accepts_start_level() {
        let t = auto_truncate(&params(0.0, 2.0, 2.0, 10), &TruncateOptions::default()).unwrap();
        assert_eq!(t.level, 64);
        assert_eq!(t.moments.block_mean, 0.0);
        assert_eq!(t.moments.pool_mean, 0.0);
    }

    #[test]
    fn auto_truncate_diverges_above_bound() {
        // bound = 10, lambda just above it.
        let p = params(10.1, 2.0, 2.0, 10);
        let opts = TruncateOptions { max_level: 1024, ..TruncateOptions::default() };
        let err = auto_truncate(&p, &opts).unwrap_err();
        let TruncateError::Diverged { prev, last, .. } = err;
        // The pool mean keeps growing with the level: divergence signature.
        if let (Some(a), Some(b)) = (prev, last) {
            assert!(b.pool_mean > a.pool_mean);
        }
    }
}
