//! Exhaustive grid-search reference for the horizon scheduling problem.
//!
//! Controls and battery power are discretized on uniform grids and every
//! combination over the window is evaluated against the raw dynamics. Ties
//! keep the lexicographically smallest (u, then p_cd) trajectory because
//! enumeration is lexicographic and improvements strict.

use nalgebra::DVector;

use crate::mpc::MpcConfig;
use crate::thermal::{BessParams, BessState, BuildingThermalModel, ThermalState};

#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub u_levels: usize,
    pub p_levels: usize,
}

#[derive(Debug, Clone)]
pub struct GridSchedule {
    pub cost: f64,
    pub u: Vec<DVector<f64>>,
    pub p_cd: Vec<f64>,
}

const FEAS_EPS: f64 = 1e-9;

fn grid(lo: f64, hi: f64, levels: usize) -> Vec<f64> {
    if levels <= 1 || hi - lo <= 0.0 {
        return vec![lo];
    }
    (0..levels)
        .map(|i| lo + (hi - lo) * i as f64 / (levels - 1) as f64)
        .collect()
}

/// Exhaustive minimum over the discretized window problem, or `None` when
/// no grid point is feasible.
pub fn mpc_grid_search(
    model: &BuildingThermalModel,
    bess: &BessParams,
    x0: &ThermalState,
    soc0: &BessState,
    cfg: &MpcConfig,
    spec: GridSpec,
) -> Option<GridSchedule> {
    let w = cfg.window;
    let n_u = model.n_controls();
    let t0 = x0.t;
    let digits = w * n_u;

    let u_grids: Vec<Vec<f64>> = (0..n_u)
        .map(|z| grid(model.u_min[z], model.u_max[z], spec.u_levels))
        .collect();
    let p_grid = grid(-bess.d_r, bess.c_r, spec.p_levels);

    // Pre-step output is fixed; if it violates the band nothing is feasible.
    let y0 = &model.c * &x0.x;
    for o in 0..model.n_outputs() {
        if y0[o] < cfg.y_min[t0][o] - FEAS_EPS || y0[o] > cfg.y_max[t0][o] + FEAS_EPS {
            return None;
        }
    }

    let mut best: Option<GridSchedule> = None;
    let mut idx = vec![0usize; digits];
    'outer: loop {
        // Decode the control trajectory.
        let u: Vec<DVector<f64>> = (0..w)
            .map(|k| DVector::from_fn(n_u, |z, _| u_grids[z][idx[k * n_u + z]]))
            .collect();

        // Roll the thermal chain and check comfort at window steps 1..w.
        let mut x = x0.x.clone();
        let mut comfort_ok = true;
        for k in 0..w {
            if k > 0 {
                let y = &model.c * &x;
                for o in 0..model.n_outputs() {
                    if y[o] < cfg.y_min[t0 + k][o] - FEAS_EPS
                        || y[o] > cfg.y_max[t0 + k][o] + FEAS_EPS
                    {
                        comfort_ok = false;
                        break;
                    }
                }
                if !comfort_ok {
                    break;
                }
            }
            x = &model.a * &x + &model.b * &u[k] + &model.e * &cfg.disturbances[t0 + k];
        }

        if comfort_ok {
            let p_hvac: Vec<f64> = u
                .iter()
                .map(|uk| uk.iter().map(|&uz| model.fan_coeffs.eval(uz)).sum())
                .collect();
            enumerate_battery(bess, soc0.soc, cfg, t0, &p_hvac, &p_grid, &u, &mut best);
        }

        // Lexicographic odometer over the control digits.
        let mut d = digits;
        loop {
            if d == 0 {
                break 'outer;
            }
            d -= 1;
            let z = d % n_u;
            if idx[d] + 1 < u_grids[z].len() {
                idx[d] += 1;
                for later in idx.iter_mut().skip(d + 1) {
                    *later = 0;
                }
                break;
            }
        }
    }
    best
}

#[allow(clippy::too_many_arguments)]
fn enumerate_battery(
    bess: &BessParams,
    soc0: f64,
    cfg: &MpcConfig,
    t0: usize,
    p_hvac: &[f64],
    p_grid: &[f64],
    u: &[DVector<f64>],
    best: &mut Option<GridSchedule>,
) {
    let w = p_hvac.len();
    let beta = bess.rho * bess.tau / bess.q_bat;
    let decay = 1.0 - bess.eta;
    let mut idx = vec![0usize; w];
    'outer: loop {
        let mut soc = soc0;
        let mut feasible = true;
        let mut cost = 0.0;
        for k in 0..w {
            let p = p_grid[idx[k]];
            let pt = p_hvac[k] + p;
            if pt < -FEAS_EPS {
                feasible = false;
                break;
            }
            soc = decay * soc + beta * p;
            if soc < bess.e_min - 1e-12 || soc > bess.e_max + 1e-12 {
                feasible = false;
                break;
            }
            cost += cfg.prices[t0 + k] * pt;
        }
        if feasible {
            let better = match best {
                None => true,
                Some(b) => cost < b.cost,
            };
            if better {
                *best = Some(GridSchedule {
                    cost,
                    u: u.to_vec(),
                    p_cd: idx.iter().map(|&i| p_grid[i]).collect(),
                });
            }
        }
        let mut d = w;
        loop {
            if d == 0 {
                break 'outer;
            }
            d -= 1;
            if idx[d] + 1 < p_grid.len() {
                idx[d] += 1;
                for later in idx.iter_mut().skip(d + 1) {
                    *later = 0;
                }
                break;
            }
        }
    }
}

/// Receding-horizon composition of the grid oracle: apply the first entries
/// of each window minimum through the raw dynamics.
pub fn grid_receding_horizon(
    model: &BuildingThermalModel,
    bess: &BessParams,
    x0: &ThermalState,
    soc0: &BessState,
    cfg: &MpcConfig,
    steps: usize,
    spec: GridSpec,
) -> Option<Vec<(DVector<f64>, f64)>> {
    let mut x = x0.clone();
    let mut soc = *soc0;
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let sol = mpc_grid_search(model, bess, &x, &soc, cfg, spec)?;
        let u0 = sol.u[0].clone();
        let p0 = sol.p_cd[0];
        let next_x = &model.a * &x.x + &model.b * &u0 + &model.e * &cfg.disturbances[x.t];
        let beta = bess.rho * bess.tau / bess.q_bat;
        soc = BessState {
            soc: (1.0 - bess.eta) * soc.soc + beta * p0,
        };
        x = ThermalState::new(next_x, x.t + 1);
        out.push((u0, p0));
    }
    Some(out)
}
