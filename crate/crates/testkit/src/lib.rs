//! Brute-force oracles used by the test suites.
//!
//! Everything here is deliberately independent of the main crates: plain
//! slices in, plain vectors out, dense O(n^3) linear algebra, no shared
//! solver code. That independence is the point — these functions are the
//! reference implementations the fast paths are checked against.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Solves `pi * Q = 0`, `sum(pi) = 1` by dense Gaussian elimination with
/// partial pivoting. `entries` are `(row, col, rate)` triplets of the full
/// generator including the diagonal; duplicate entries accumulate.
///
/// Panics on a singular system; intended for small test systems only.
pub fn dense_stationary(n: usize, entries: &[(usize, usize, f64)]) -> Vec<f64> {
    assert!(n > 0);
    // A = Q^T with the first balance equation replaced by normalization.
    let mut a = vec![0.0f64; n * n];
    for &(r, c, v) in entries {
        assert!(r < n && c < n);
        a[c * n + r] += v;
    }
    for c in 0..n {
        a[c] = 1.0;
    }
    let mut rhs = vec![0.0f64; n];
    rhs[0] = 1.0;

    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r1, &r2| {
                a[r1 * n + col]
                    .abs()
                    .partial_cmp(&a[r2 * n + col].abs())
                    .unwrap()
            })
            .unwrap();
        assert!(a[pivot * n + col].abs() > 1e-300, "singular system at column {col}");
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            rhs.swap(col, pivot);
        }
        let inv = 1.0 / a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] * inv;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0f64; n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for k in row + 1..n {
            acc -= a[row * n + k] * x[k];
        }
        x[row] = acc / a[row * n + row];
    }
    let total: f64 = x.iter().sum();
    for v in &mut x {
        *v /= total;
    }
    x
}

/// Residual of the block-mean polynomial
/// `y^(b+1) - sum_{k=1..b} y^k / (b - mean) + mean / (b - mean)`,
/// an algebraically independent restatement of the mean equation. Zero at
/// the fitted ratio whenever `mean < b`.
pub fn eq12_residual(y: f64, mean: f64, b: u32) -> f64 {
    assert!(mean < b as f64);
    let denom = b as f64 - mean;
    let mut power_sum = 0.0;
    let mut t = 1.0;
    for _ in 1..=b {
        t *= y;
        power_sum += t;
    }
    t * y - power_sum / denom + mean / denom
}

/// First and second coordinate means of a flat joint table stored row-major
/// with `width` columns: returns `(sum i p, sum j p) / sum p`.
pub fn table_moments(table: &[f64], width: usize) -> (f64, f64) {
    let total: f64 = table.iter().sum();
    let mut mi = 0.0;
    let mut mj = 0.0;
    for (cell, p) in table.iter().enumerate() {
        mi += (cell % width) as f64 * p;
        mj += (cell / width) as f64 * p;
    }
    (mi / total, mj / total)
}

/// Randomly perturbs a probability table while preserving its normalization
/// and both coordinate means, returning a distinct feasible distribution.
///
/// The perturbation direction is drawn at random on the cells carrying
/// non-negligible mass, projected onto the null space of the three constraint
/// gradients (all-ones, column index, row index), and scaled to keep every
/// entry non-negative.
///
/// Panics if the table has fewer than five cells with usable mass (the null
/// space would be trivial).
pub fn perturb_feasible(table: &[f64], width: usize, seed: u64, magnitude: f64) -> Vec<f64> {
    let support: Vec<usize> = table
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 1e-13)
        .map(|(c, _)| c)
        .collect();
    assert!(support.len() >= 5, "not enough supported cells to perturb");

    // Orthonormal basis of the constraint gradients restricted to the support.
    let m = support.len();
    let raw: [Vec<f64>; 3] = [
        vec![1.0; m],
        support.iter().map(|&c| (c % width) as f64).collect(),
        support.iter().map(|&c| (c / width) as f64).collect(),
    ];
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for g in raw {
        let mut v = g;
        for e in &basis {
            let dot: f64 = v.iter().zip(e).map(|(a, b)| a * b).sum();
            for (vk, ek) in v.iter_mut().zip(e) {
                *vk -= dot * ek;
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(norm > 1e-12, "degenerate constraint basis");
        for vk in &mut v {
            *vk /= norm;
        }
        basis.push(v);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = || (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    loop {
        let mut dir: Vec<f64> = (0..m).map(|_| uniform() - 0.5).collect();
        // Project twice for floating-point orthogonality.
        for _ in 0..2 {
            for e in &basis {
                let dot: f64 = dir.iter().zip(e).map(|(a, b)| a * b).sum();
                for (dk, ek) in dir.iter_mut().zip(e) {
                    *dk -= dot * ek;
                }
            }
        }
        let norm = dir.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < 1e-9 {
            continue; // unlucky draw, retry
        }

        // Largest step keeping every supported entry non-negative.
        let mut t_max = f64::INFINITY;
        for (k, &c) in support.iter().enumerate() {
            if dir[k] < 0.0 {
                t_max = t_max.min(table[c] / -dir[k]);
            }
        }
        let t = magnitude.min(0.5) * t_max * (0.25 + 0.75 * uniform());
        if !(t > 0.0) {
            continue;
        }
        let mut out = table.to_vec();
        for (k, &c) in support.iter().enumerate() {
            out[c] += t * dir[k];
        }
        return out;
    }
}
