//! Shared toy-instance generator for the oracle cross-check tests.
//!
//! Instances are single-zone buildings with a cooling HVAC and a small
//! battery, constructed so that (a) the comfort band is reachable from the
//! initial state, (b) the battery cannot fully erase the fan power floor
//! (so optimal costs stay bounded away from zero), and (c) prices are
//! distinct (no degenerate ties between window steps).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use temarket_core::mpc::MpcConfig;
use temarket_core::thermal::{
    BessParams, BessState, BuildingThermalModel, FanCoeffs, ThermalState,
};

pub struct ToyInstance {
    pub model: BuildingThermalModel,
    pub bess: BessParams,
    pub x0: ThermalState,
    pub soc0: BessState,
    pub cfg: MpcConfig,
}

pub fn toy_instance(rng: &mut ChaCha8Rng, window: usize, horizon: usize) -> ToyInstance {
    let a = rng.gen_range(0.82..0.93);
    let u_max = rng.gen_range(1.2..1.6);
    let b = rng.gen_range(-4.5..-2.5);
    let gain = rng.gen_range(2.2..3.4);

    let fan = FanCoeffs::new(
        rng.gen_range(0.01..0.05),
        rng.gen_range(0.0..0.05),
        rng.gen_range(0.3..0.7),
        rng.gen_range(0.5..0.9),
    );
    let model = BuildingThermalModel::new(
        DMatrix::from_row_slice(1, 1, &[a]),
        DMatrix::from_row_slice(1, 1, &[b]),
        DMatrix::from_row_slice(1, 1, &[gain]),
        DMatrix::identity(1, 1),
        fan,
        DVector::from_element(1, 0.0),
        DVector::from_element(1, u_max),
    )
    .unwrap();

    let d_r = rng.gen_range(0.1..0.3);
    let bess = BessParams::new(
        rng.gen_range(0.0..0.05),
        rng.gen_range(0.85..1.0),
        rng.gen_range(4.0..10.0),
        1.0,
        0.1,
        0.9,
        d_r,
        rng.gen_range(0.4..1.0),
    )
    .unwrap();

    let x0 = ThermalState::new(DVector::from_element(1, rng.gen_range(21.0..23.0)), 0);
    let soc0 = BessState { soc: rng.gen_range(0.3..0.7) };

    let steps = window + horizon + 1;
    let prices: Vec<f64> = (0..steps).map(|_| rng.gen_range(1.0..6.0)).collect();
    let disturbances: Vec<DVector<f64>> =
        (0..steps).map(|_| DVector::from_element(1, 1.0)).collect();
    let y_min: Vec<DVector<f64>> = (0..steps)
        .map(|_| DVector::from_element(1, 19.5))
        .collect();
    let y_max: Vec<DVector<f64>> = (0..steps)
        .map(|_| DVector::from_element(1, 25.5))
        .collect();

    ToyInstance {
        model,
        bess,
        x0,
        soc0,
        cfg: MpcConfig::new(window, prices, disturbances, y_min, y_max),
    }
}
