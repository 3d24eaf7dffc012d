//! Property tests for the fitted product form and the table utilities.

use entroq::*;
use proptest::prelude::*;

proptest! {
    #[test]
    fn block_mean_is_strictly_monotone(
        exp1 in -3.0f64..3.0,
        gap in 0.01f64..1.0,
        b in prop::sample::select(vec![1u32, 2, 10, 80]),
    ) {
        let y1 = 10f64.powf(exp1);
        let y2 = 10f64.powf(exp1 + gap);
        prop_assert!(mean_block_given_y(y1, b) < mean_block_given_y(y2, b));
    }

    #[test]
    fn reflection_symmetry_of_the_ratio(
        frac in 0.01f64..0.99,
        b in prop::sample::select(vec![2u32, 10, 80]),
    ) {
        let mean = frac * b as f64;
        prop_assume!(mean > 0.0 && mean < b as f64);
        let y = solve_y(mean, b, 1e-12).unwrap();
        let mirrored = solve_y(b as f64 - mean, b, 1e-12).unwrap();
        prop_assert!((y * mirrored - 1.0).abs() <= 1e-9, "product {}", y * mirrored);
    }

    #[test]
    fn fitted_ratio_satisfies_the_mean_polynomial(
        frac in 0.1f64..0.9,
        b in prop::sample::select(vec![2u32, 10, 40, 80]),
    ) {
        let mean = frac * b as f64;
        let y = solve_y(mean, b, 1e-12).unwrap();
        let residual = entroq_testkit::eq12_residual(y, mean, b);
        prop_assert!(residual.abs() <= 1e-8, "polynomial residual {residual:e}");
    }

    #[test]
    fn pool_ratio_roundtrips_the_mean(mean in 0.0f64..1000.0) {
        let z = solve_z(mean).unwrap();
        prop_assert!((0.0..1.0).contains(&z));
        prop_assert!((z / (1.0 - z) - mean).abs() <= 1e-9 * mean.max(1.0));
    }

    #[test]
    fn fit_residuals_stay_within_contract(
        frac in 0.001f64..0.999,
        pool_mean in 0.0f64..500.0,
        b in prop::sample::select(vec![1u32, 2, 10, 80, 160]),
    ) {
        let sol = maxent_distribution(frac * b as f64, pool_mean, b).unwrap();
        prop_assert!(sol.residuals.max() <= 1e-9, "residual {:e}", sol.residuals.max());
    }

    #[test]
    fn table_moments_stay_in_range(
        cells in prop::collection::vec(0.0f64..1.0, 12..60),
    ) {
        let b = 2u32;
        let width = b as usize + 1;
        let cap = (cells.len() / width) as u32 - 1;
        let mut probs = cells;
        probs.truncate(width * (cap as usize + 1));
        let total: f64 = probs.iter().sum();
        prop_assume!(total > 1e-6);
        let dist = JointDistribution::from_unnormalized(b, cap, probs);
        let m = dist.moments();
        prop_assert!(m.block_mean >= 0.0 && m.block_mean <= b as f64);
        prop_assert!(m.pool_mean >= 0.0 && m.pool_mean <= cap as f64);
        let (block, pool) = dist.marginals();
        prop_assert!((block.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        prop_assert!((pool.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn divergence_from_feasible_tables_is_nonnegative(
        frac in 0.05f64..0.95,
        pool_mean in 0.05f64..4.0,
        seed in 0u64..1000,
    ) {
        let b = 3u32;
        let sol = maxent_distribution(frac * b as f64, pool_mean, b).unwrap();
        let table = sol.tabulate(60);
        let perturbed = entroq_testkit::perturb_feasible(table.probs(), b as usize + 1, seed, 0.2);
        let exact = JointDistribution::from_unnormalized(b, 60, perturbed);
        let report = kl_divergence(&exact, &sol).unwrap();
        prop_assert!(report.kl >= -1e-12, "kl {}", report.kl);
    }
}
