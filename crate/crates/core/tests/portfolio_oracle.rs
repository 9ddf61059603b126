//! Portfolio solver against the simplex-grid oracle, and covariance against
//! the double-loop recomputation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use temarket_core::oracle::mpo::{naive_return_stats, simplex_grid_search};
use temarket_core::portfolio::{
    make_bids, return_stats, solve_mpo, BidderConfig, PortfolioError, ReturnStatistics,
};

fn random_psd(rng: &mut ChaCha8Rng, l: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(l, l, |_, _| rng.gen_range(-0.7..0.7));
    let mut sigma = m.transpose() * &m / l as f64;
    for i in 0..l {
        for j in 0..i {
            let v = 0.5 * (sigma[(i, j)] + sigma[(j, i)]);
            sigma[(i, j)] = v;
            sigma[(j, i)] = v;
        }
    }
    sigma
}

fn bidder(l: usize, rorm: f64) -> BidderConfig {
    let prices: BTreeMap<String, f64> = (0..l).map(|i| (format!("asker{i}"), 4.0)).collect();
    BidderConfig::new("bidder1", 1.0, rorm, prices, 2).unwrap()
}

fn check_instance(rng: &mut ChaCha8Rng, l: usize, step: f64) {
    let sigma = random_psd(rng, l);
    let r_bar = DVector::from_fn(l, |_, _| rng.gen_range(-0.5..1.0));
    let max_r = r_bar.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_r = r_bar.iter().cloned().fold(f64::INFINITY, f64::min);
    let rorm = rng.gen_range((min_r - 0.1)..max_r);
    let stats = ReturnStatistics {
        r_bar: r_bar.clone(),
        sigma: sigma.clone(),
        sample_matrix: DMatrix::zeros(2, l),
    };
    let cfg = bidder(l, rorm);
    let weights = solve_mpo(&stats, &cfg).unwrap();
    let grid = simplex_grid_search(&r_bar, &sigma, rorm, step).expect("grid finds the vertex");

    let solver_obj = (weights.w.transpose() * &sigma * &weights.w)[(0, 0)];
    assert!(
        solver_obj <= grid.objective + 1e-3,
        "solver {} vs grid {} (L = {l})",
        solver_obj,
        grid.objective
    );
    // Constraint residuals at 1e-8.
    let sum: f64 = weights.w.iter().sum();
    assert!((sum - 1.0).abs() <= 1e-8, "weights sum to {sum}");
    for &wi in weights.w.iter() {
        assert!((-1e-8..=1.0 + 1e-8).contains(&wi), "weight {wi} out of box");
    }
    assert!(
        r_bar.dot(&weights.w) >= rorm - 1e-8,
        "return floor violated: {} < {rorm}",
        r_bar.dot(&weights.w)
    );
}

#[test]
fn two_asset_solver_tracks_the_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..30 {
        check_instance(&mut rng, 2, 0.001);
    }
}

#[test]
fn three_asset_solver_tracks_the_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..30 {
        check_instance(&mut rng, 3, 0.01);
    }
}

#[test]
fn infeasible_floor_agrees_with_the_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..20 {
        let l = 2 + (rng.gen_range(0..2usize));
        let sigma = random_psd(&mut rng, l);
        let r_bar = DVector::from_fn(l, |_, _| rng.gen_range(-0.5..0.5));
        let max_r = r_bar.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let rorm = max_r + 0.05;
        let stats = ReturnStatistics {
            r_bar: r_bar.clone(),
            sigma: sigma.clone(),
            sample_matrix: DMatrix::zeros(2, l),
        };
        let err = solve_mpo(&stats, &bidder(l, rorm)).unwrap_err();
        assert!(matches!(err, PortfolioError::InfeasibleRorm { .. }));
        assert!(simplex_grid_search(&r_bar, &sigma, rorm, 0.01).is_none());
    }
}

#[test]
fn covariance_matches_the_double_loop_and_is_psd() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..100 {
        let n = rng.gen_range(2..12usize);
        let l = rng.gen_range(1..5usize);
        let samples = DMatrix::from_fn(n, l, |_, _| rng.gen_range(-2.0..2.0));
        let stats = return_stats(&samples).unwrap();
        let (mean, sigma) = naive_return_stats(&samples);
        for j in 0..l {
            assert!((stats.r_bar[j] - mean[j]).abs() <= 1e-12);
            for i in 0..l {
                assert!(
                    (stats.sigma[(i, j)] - sigma[(i, j)]).abs() <= 1e-12,
                    "covariance entry ({i},{j}) drifted"
                );
            }
        }
        let min_eig = stats
            .sigma
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!(min_eig >= -1e-9);
        // Quadratic form is non-negative for any weights.
        let w = DVector::from_fn(l, |_, _| rng.gen_range(-1.0..1.0));
        assert!((w.transpose() * &stats.sigma * &w)[(0, 0)] >= -1e-9);
    }
}

#[test]
fn raising_the_floor_weakly_raises_grid_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..10 {
        let l = 3;
        let sigma = random_psd(&mut rng, l);
        let r_bar = DVector::from_fn(l, |_, _| rng.gen_range(-0.3..0.8));
        let max_r = r_bar.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min_r = r_bar.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut prev = f64::NEG_INFINITY;
        let sweeps = 8;
        for s in 0..sweeps {
            let rorm = min_r + (max_r - min_r) * s as f64 / (sweeps - 1) as f64;
            let Some(sol) = simplex_grid_search(&r_bar, &sigma, rorm, 0.01) else {
                break;
            };
            assert!(
                sol.objective >= prev - 1e-12,
                "grid variance decreased as the floor rose"
            );
            prev = sol.objective;
        }
    }
}

#[test]
fn surviving_bids_sum_to_capacity() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..30 {
        let l = rng.gen_range(1..4usize);
        let sigma = random_psd(&mut rng, l);
        let r_bar = DVector::from_fn(l, |_, _| rng.gen_range(0.0..1.0));
        let stats = ReturnStatistics {
            r_bar: r_bar.clone(),
            sigma,
            sample_matrix: DMatrix::zeros(2, l),
        };
        let prices: BTreeMap<String, f64> =
            (0..l).map(|i| (format!("asker{i}"), 2.0 + i as f64)).collect();
        let cfg = BidderConfig::new("bidder1", 1.7, 0.0, prices, 2).unwrap();
        let weights = solve_mpo(&stats, &cfg).unwrap();
        let bids = make_bids(&weights, &cfg);
        let total: f64 = bids.iter().map(|b| b.quantity_kw).sum();
        // All weights survive filtering unless some are sub-epsilon dust.
        let dust: f64 = weights
            .w
            .iter()
            .map(|&w| w * cfg.capacity_kw)
            .filter(|q| *q < 1e-6)
            .sum();
        assert!((total + dust - 1.7).abs() <= 1e-6);
        assert!(total <= 1.7 + 1e-8);
    }
}
