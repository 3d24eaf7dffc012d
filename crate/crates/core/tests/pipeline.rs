//! End-to-end runs: exact solve -> moments -> product-form fit -> divergence,
//! cross-checked against the simulator.

use entroq::*;

const REFERENCE: (f64, f64, f64, u32) = (1.5, 2.0, 2.0, 10);

fn reference_truncation() -> Truncation {
    let (lambda, mu1, mu2, b) = REFERENCE;
    let p = Params::new(lambda, mu1, mu2, b).unwrap();
    auto_truncate(&p, &TruncateOptions::default()).unwrap()
}

#[test]
fn exact_block_mean_obeys_littles_law() {
    // Every transaction spends one full build period in the block, so the
    // stationary block mean must equal lambda / mu2 whatever mu1 and b are.
    let t = reference_truncation();
    assert!((t.moments.block_mean - 0.75).abs() < 1e-9);
    let p = Params::new(1.1, 6.0, 2.0, 30).unwrap();
    let t = auto_truncate(&p, &TruncateOptions::default()).unwrap();
    assert!((t.moments.block_mean - 0.55).abs() < 1e-9);
}

#[test]
fn maxent_from_exact_moments_reproduces_constraints() {
    let t = reference_truncation();
    let sol = maxent_distribution(t.moments.block_mean, t.moments.pool_mean, REFERENCE.3).unwrap();
    assert!(
        sol.residuals.max() <= 1e-9,
        "constraint residual {:e}",
        sol.residuals.max()
    );
}

#[test]
fn kl_divergence_golden_value() {
    // Frozen from a pinned run of this pipeline; guards both solvers at once.
    let t = reference_truncation();
    let sol = maxent_distribution(t.moments.block_mean, t.moments.pool_mean, REFERENCE.3).unwrap();
    let report = kl_divergence(&t.distribution, &sol).unwrap();
    assert!(report.kl >= 0.0);
    assert!(
        (report.kl - 3.507576268954721e-2).abs() <= 1e-8,
        "kl drifted: {:.15e}",
        report.kl
    );
    assert!(report.exact_tail_mass <= 1e-10);
    assert!(report.approx_tail_mass <= 1e-10);
}

#[test]
fn maxent_entropy_dominates_exact_entropy() {
    let t = reference_truncation();
    let sol = maxent_distribution(t.moments.block_mean, t.moments.pool_mean, REFERENCE.3).unwrap();
    assert!(entropy_closed_form(&sol) >= entropy_direct(&t.distribution) - 1e-6);
}

#[test]
fn zero_load_pipeline_is_fully_degenerate() {
    let p = Params::new(0.0, 2.0, 2.0, 4).unwrap();
    let t = auto_truncate(&p, &TruncateOptions::default()).unwrap();
    assert_eq!(t.moments.block_mean, 0.0);
    assert_eq!(t.moments.pool_mean, 0.0);
    let sol = maxent_distribution(0.0, 0.0, 4).unwrap();
    assert!(sol.degeneracy.block_empty && sol.degeneracy.pool_empty);
    let report = kl_divergence(&t.distribution, &sol).unwrap();
    assert_eq!(report.kl, 0.0);
}

#[test]
fn simulator_agrees_with_exact_moments_on_grid() {
    // Five stable points, one seed; at least four must land within three
    // standard errors on both coordinates.
    let grid = [
        (1.5, 2.0, 2.0, 10u32),
        (0.5, 2.0, 2.0, 1),
        (3.0, 6.0, 2.0, 80),
        (1.0, 1.5, 3.0, 5),
        (2.5, 4.0, 3.0, 20),
    ];
    let mut hits = 0;
    for (lambda, mu1, mu2, b) in grid {
        let p = Params::new(lambda, mu1, mu2, b).unwrap();
        let exact = auto_truncate(&p, &TruncateOptions::default()).unwrap().moments;
        let est = simulate(&p, &SimConfig::new(1e5, 20_250_810)).unwrap();
        let block_ok = (est.block_mean - exact.block_mean).abs() <= 3.0 * est.block_se;
        let pool_ok = (est.pool_mean - exact.pool_mean).abs() <= 3.0 * est.pool_se;
        if block_ok && pool_ok {
            hits += 1;
        }
    }
    assert!(hits >= 4, "only {hits}/5 grid points inside 3 standard errors");
}

#[test]
fn event_count_matches_stationary_event_rate() {
    // Expected events = horizon * E[lambda + mu1*1(mining) + mu2*1(building)]
    // under the exact stationary law; the run must land within a generous
    // multiple of the Poisson-scale fluctuation.
    let p = Params::new(1.5, 2.0, 2.0, 10).unwrap();
    let t = reference_truncation();
    let dist = &t.distribution;
    let mut p_mining = 0.0; // block empty, pool occupied
    let mut p_building = 0.0; // block occupied
    for j in 0..=dist.pool_cap() {
        for i in 0..=dist.b() {
            let mass = dist.prob(i, j);
            if i == 0 && j >= 1 {
                p_mining += mass;
            }
            if i >= 1 {
                p_building += mass;
            }
        }
    }
    let rate = p.lambda + p.mu1 * p_mining + p.mu2 * p_building;
    let horizon = 2e5;
    let est = simulate(&p, &SimConfig::new(horizon, 7)).unwrap();
    let expected = rate * horizon;
    let slack = 15.0 * expected.sqrt();
    assert!(
        (est.n_events as f64 - expected).abs() <= slack,
        "events {} vs expected {expected:.0} (slack {slack:.0})",
        est.n_events
    );
}
