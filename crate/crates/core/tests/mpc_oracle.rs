//! Cross-checks of the horizon solver against the exhaustive grid oracle,
//! plus the receding-horizon contract.

mod common;

use common::toy_instance;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use temarket_core::mpc::{
    mpc_step, run_receding_horizon, solve_horizon, validate_trajectory, MpcConfig, MpcError,
};
use temarket_core::oracle::mpc::{grid_receding_horizon, mpc_grid_search, GridSpec};
use temarket_core::thermal::{
    BessParams, BessState, BuildingThermalModel, FanCoeffs, ThermalState,
};

const GRID: GridSpec = GridSpec {
    u_levels: 21,
    p_levels: 11,
};

fn frozen_instance(window: usize) -> common::ToyInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut inst = toy_instance(&mut rng, window, 2);
    inst.cfg.prices = (0..inst.cfg.prices.len())
        .map(|i| 1.5 + 1.1 * i as f64)
        .collect();
    inst
}

#[test]
fn zero_price_window_costs_nothing() {
    let mut inst = frozen_instance(1);
    for p in inst.cfg.prices.iter_mut() {
        *p = 0.0;
    }
    let traj = solve_horizon(&inst.model, &inst.bess, &inst.x0, &inst.soc0, &inst.cfg).unwrap();
    assert_eq!(traj.cost, 0.0);
}

#[test]
fn two_step_single_zone_matches_grid_within_two_percent() {
    let inst = frozen_instance(2);
    let traj = solve_horizon(&inst.model, &inst.bess, &inst.x0, &inst.soc0, &inst.cfg).unwrap();
    let oracle = mpc_grid_search(&inst.model, &inst.bess, &inst.x0, &inst.soc0, &inst.cfg, GRID)
        .expect("toy instance must be grid-feasible");
    assert!(
        traj.cost <= 1.02 * oracle.cost,
        "solver cost {} vs grid minimum {}",
        traj.cost,
        oracle.cost
    );
    let check =
        validate_trajectory(&inst.model, &inst.bess, &inst.x0, &inst.soc0, &inst.cfg, &traj)
            .unwrap();
    assert!(check.within(1e-6, 1e-4, 1e-9), "residuals: {check:?}");
}

#[test]
fn uniform_price_scaling_is_monotone_in_cost() {
    let inst = frozen_instance(2);
    let mut low = inst.cfg.clone();
    for p in low.prices.iter_mut() {
        *p = 2.0;
    }
    let mut high = low.clone();
    for p in high.prices.iter_mut() {
        *p = 5.0;
    }
    let cost_low = solve_horizon(&inst.model, &inst.bess, &inst.x0, &inst.soc0, &low)
        .unwrap()
        .cost;
    let cost_high = solve_horizon(&inst.model, &inst.bess, &inst.x0, &inst.soc0, &high)
        .unwrap()
        .cost;
    assert!(cost_high >= cost_low - 1e-9);
}

#[test]
fn random_instances_stay_within_grid_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut checked = 0;
    while checked < 6 {
        let w = 1 + (checked % 3);
        let mut inst = toy_instance(&mut rng, w, 1);
        inst.cfg.polish = true;
        let Some(oracle) =
            mpc_grid_search(&inst.model, &inst.bess, &inst.x0, &inst.soc0, &inst.cfg, GRID)
        else {
            continue;
        };
        let traj =
            solve_horizon(&inst.model, &inst.bess, &inst.x0, &inst.soc0, &inst.cfg).unwrap();
        assert!(
            traj.cost <= 1.02 * oracle.cost + 1e-9,
            "window {w}: solver {} vs grid {}",
            traj.cost,
            oracle.cost
        );
        let check =
            validate_trajectory(&inst.model, &inst.bess, &inst.x0, &inst.soc0, &inst.cfg, &traj)
                .unwrap();
        assert!(check.within(1e-6, 1e-4, 1e-9), "residuals: {check:?}");
        checked += 1;
    }
}

#[test]
fn mpc_step_applies_the_first_horizon_entry() {
    let inst = frozen_instance(2);
    let traj = solve_horizon(&inst.model, &inst.bess, &inst.x0, &inst.soc0, &inst.cfg).unwrap();
    let (u0, p0, next_x, next_soc) =
        mpc_step(&inst.model, &inst.bess, &inst.x0, &inst.soc0, &inst.cfg).unwrap();
    assert_eq!(u0, traj.u[0]);
    assert_eq!(p0, traj.p_cd[0]);
    assert_eq!(next_x.t, 1);
    // The measured state is the model propagation of the applied input.
    let expected =
        &inst.model.a * &inst.x0.x + &inst.model.b * &u0 + &inst.model.e * &inst.cfg.disturbances[0];
    assert!((next_x.x - expected).norm() < 1e-12);
    assert!(next_soc.soc >= inst.bess.e_min && next_soc.soc <= inst.bess.e_max);
}

#[test]
fn consecutive_steps_read_a_shifted_window() {
    // A price spike at the absolute index just past the first window shows
    // up in the second solve if and only if the window shifted.
    let mut inst = frozen_instance(2);
    inst.cfg.prices = vec![2.0, 2.0, 40.0, 2.0, 2.0];
    let (_, _, x1, soc1) =
        mpc_step(&inst.model, &inst.bess, &inst.x0, &inst.soc0, &inst.cfg).unwrap();
    assert_eq!(x1.t, 1);
    let second = solve_horizon(&inst.model, &inst.bess, &x1, &soc1, &inst.cfg).unwrap();
    let recomputed: f64 = (0..2).map(|k| inst.cfg.prices[1 + k] * second.p_total[k]).sum();
    assert!((second.cost - recomputed).abs() <= 1e-9 * recomputed.abs().max(1.0));
}

#[test]
fn receding_horizon_zero_steps_is_empty() {
    let inst = frozen_instance(2);
    let records =
        run_receding_horizon(&inst.model, &inst.bess, &inst.x0, &inst.soc0, &inst.cfg, 0).unwrap();
    assert!(records.is_empty());
}

#[test]
fn receding_horizon_series_serializes_to_csv() {
    let inst = frozen_instance(2);
    let records =
        run_receding_horizon(&inst.model, &inst.bess, &inst.x0, &inst.soc0, &inst.cfg, 2).unwrap();
    let csv = temarket_core::mpc::records_to_csv(&records);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,u_0,p_cd,p_total,y_0,soc"));
    assert_eq!(lines.count(), 2);
    let first = csv.lines().nth(1).unwrap();
    assert!(first.starts_with("0,"));
    assert_eq!(first.split(',').count(), 6);
}

#[test]
fn receding_horizon_single_step_equals_mpc_step() {
    let inst = frozen_instance(2);
    let records =
        run_receding_horizon(&inst.model, &inst.bess, &inst.x0, &inst.soc0, &inst.cfg, 1).unwrap();
    let (u0, p0, _, soc1) =
        mpc_step(&inst.model, &inst.bess, &inst.x0, &inst.soc0, &inst.cfg).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].u, u0);
    assert_eq!(records[0].p_cd, p0);
    assert_eq!(records[0].soc, soc1.soc);
}

#[test]
fn receding_composition_tracks_the_grid_oracle() {
    // Chain four windows and compare the applied plan with the oracle's own
    // receding-horizon composition, step by step on cost contributions.
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut inst = toy_instance(&mut rng, 2, 5);
    inst.cfg.prices = (0..inst.cfg.prices.len())
        .map(|i| 1.5 + 1.1 * i as f64)
        .collect();
    inst.cfg.polish = true;
    let records =
        run_receding_horizon(&inst.model, &inst.bess, &inst.x0, &inst.soc0, &inst.cfg, 4).unwrap();
    let oracle = grid_receding_horizon(
        &inst.model,
        &inst.bess,
        &inst.x0,
        &inst.soc0,
        &inst.cfg,
        4,
        GRID,
    )
    .expect("grid-feasible");
    assert_eq!(records.len(), 4);
    let solver_cost: f64 = records
        .iter()
        .map(|r| inst.cfg.prices[r.step] * r.p_total)
        .sum();
    let mut oracle_cost = 0.0;
    for (k, (u, p)) in oracle.iter().enumerate() {
        let ph: f64 = u
            .iter()
            .map(|&uz| inst.model.fan_coeffs.eval(uz))
            .sum::<f64>();
        oracle_cost += inst.cfg.prices[k] * (ph + p);
    }
    // Closed-loop trajectories need not match exactly; costs must be close.
    assert!(
        solver_cost <= 1.05 * oracle_cost + 1e-9,
        "solver {solver_cost} vs oracle {oracle_cost}"
    );
}

#[test]
fn grid_argmin_is_invariant_under_price_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let inst = toy_instance(&mut rng, 2, 0);
    let small = GridSpec {
        u_levels: 7,
        p_levels: 5,
    };
    let base = mpc_grid_search(&inst.model, &inst.bess, &inst.x0, &inst.soc0, &inst.cfg, small)
        .expect("feasible");
    let mut scaled_cfg = inst.cfg.clone();
    for p in scaled_cfg.prices.iter_mut() {
        *p *= 3.5;
    }
    let scaled =
        mpc_grid_search(&inst.model, &inst.bess, &inst.x0, &inst.soc0, &scaled_cfg, small)
            .expect("feasible");
    assert_eq!(base.u, scaled.u);
    assert_eq!(base.p_cd, scaled.p_cd);
}

#[test]
fn infeasible_comfort_band_is_reported() {
    let mut inst = frozen_instance(2);
    // A band the dynamics cannot reach by the next step.
    for y in inst.cfg.y_min.iter_mut() {
        *y = DVector::from_element(1, -50.0);
    }
    for y in inst.cfg.y_max.iter_mut() {
        *y = DVector::from_element(1, -40.0);
    }
    let err = solve_horizon(&inst.model, &inst.bess, &inst.x0, &inst.soc0, &inst.cfg).unwrap_err();
    assert!(matches!(err, MpcError::Infeasible { .. }));
}

#[test]
fn slack_penalty_recovers_infeasible_bands() {
    let mut inst = frozen_instance(2);
    for y in inst.cfg.y_min.iter_mut() {
        *y = DVector::from_element(1, -50.0);
    }
    for y in inst.cfg.y_max.iter_mut() {
        *y = DVector::from_element(1, -40.0);
    }
    inst.cfg.slack_penalty = Some(100.0);
    let traj = solve_horizon(&inst.model, &inst.bess, &inst.x0, &inst.soc0, &inst.cfg).unwrap();
    // The returned cost stays the pure energy cost.
    let recomputed: f64 = traj
        .p_total
        .iter()
        .zip(&inst.cfg.prices)
        .map(|(pt, l)| pt * l)
        .sum();
    assert!((traj.cost - recomputed).abs() <= 1e-9 * recomputed.abs().max(1.0));
}

#[test]
fn identity_building_with_zero_fan_needs_nothing() {
    // Identity dynamics, no disturbance, x0 inside a wide band, zero fan
    // floor: the controller can sit still at zero cost.
    let model = BuildingThermalModel::new(
        DMatrix::identity(1, 1),
        DMatrix::from_row_slice(1, 1, &[-1.0]),
        DMatrix::zeros(1, 1),
        DMatrix::identity(1, 1),
        FanCoeffs::new(0.0, 0.0, 1.0, 0.0),
        DVector::from_element(1, 0.0),
        DVector::from_element(1, 1.0),
    )
    .unwrap();
    let bess = BessParams::new(0.0, 1.0, 5.0, 1.0, 0.1, 0.9, 0.0, 0.5).unwrap();
    let x0 = ThermalState::new(DVector::from_element(1, 22.0), 0);
    let soc0 = BessState { soc: 0.5 };
    let cfg = MpcConfig::new(
        3,
        vec![3.0; 4],
        vec![DVector::zeros(0); 4],
        vec![DVector::from_element(1, 10.0); 4],
        vec![DVector::from_element(1, 30.0); 4],
    );
    let model = BuildingThermalModel::new(
        model.a.clone(),
        model.b.clone(),
        DMatrix::zeros(1, 0),
        model.c.clone(),
        model.fan_coeffs,
        model.u_min.clone(),
        model.u_max.clone(),
    )
    .unwrap();
    let (u0, p0, next_x, _) = mpc_step(&model, &bess, &x0, &soc0, &cfg).unwrap();
    assert!(u0[0].abs() < 1e-9);
    assert!(p0.abs() < 1e-9);
    assert!((next_x.x[0] - 22.0).abs() < 1e-9);
}
