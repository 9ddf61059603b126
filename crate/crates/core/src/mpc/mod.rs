//! Finite-horizon co-scheduling of HVAC and battery, run in receding-horizon
//! fashion.
//!
//! The horizon problem minimizes the net cost of purchased energy over a
//! window of `W` steps subject to the thermal dynamics, comfort band, fan
//! power curve, battery dynamics and the no-export rule. The cubic fan curve
//! makes the problem nonconvex, so the solver works on a piecewise-linear
//! over-approximation of the per-zone fan curve (a linear program), then
//! re-optimizes the battery schedule against the exact fan power of the
//! chosen airflow. An optional polish pass runs a projected local search on
//! the continuous cubic.

pub mod linprog;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::thermal::{
    hvac_power, step_bess, step_thermal, BessError, BessParams, BessState, BuildingThermalModel,
    ModelError, ThermalState,
};
use linprog::{Cmp, LpError, LpProblem};

pub const DEFAULT_FAN_SEGMENTS: usize = 8;

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("horizon problem infeasible: {detail}")]
    Infeasible { detail: String },
    #[error("solver failed: {detail}")]
    Solver {
        detail: String,
        best: Option<Box<ScheduleTrajectory>>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Bess(#[from] BessError),
    #[error("bad configuration: {0}")]
    Config(String),
}

/// Horizon configuration. Forecast vectors are absolute time series; a solve
/// starting from a state at timestep `t` reads indices `t..t+window`.
#[derive(Debug, Clone)]
pub struct MpcConfig {
    pub window: usize,
    /// Energy price forecast, cents/kW per step.
    pub prices: Vec<f64>,
    pub disturbances: Vec<DVector<f64>>,
    pub y_min: Vec<DVector<f64>>,
    pub y_max: Vec<DVector<f64>>,
    /// Linear comfort-violation penalty (cents per degree per step).
    /// Disabled by default: infeasible comfort is a hard error.
    pub slack_penalty: Option<f64>,
    /// Number of chords in the fan-curve over-approximation.
    pub fan_segments: usize,
    /// Run the projected local-search refinement on the continuous cubic.
    pub polish: bool,
}

impl MpcConfig {
    pub fn new(
        window: usize,
        prices: Vec<f64>,
        disturbances: Vec<DVector<f64>>,
        y_min: Vec<DVector<f64>>,
        y_max: Vec<DVector<f64>>,
    ) -> Self {
        Self {
            window,
            prices,
            disturbances,
            y_min,
            y_max,
            slack_penalty: None,
            fan_segments: DEFAULT_FAN_SEGMENTS,
            polish: false,
        }
    }

    /// Check the configuration against a model for a solve spanning
    /// `t0..t0+steps`.
    pub fn validate(
        &self,
        model: &BuildingThermalModel,
        t0: usize,
        steps: usize,
    ) -> Result<(), MpcError> {
        if self.window < 1 {
            return Err(MpcError::Config("window must be >= 1".into()));
        }
        if self.fan_segments < 1 {
            return Err(MpcError::Config("fan_segments must be >= 1".into()));
        }
        if let Some(p) = self.slack_penalty {
            if !(p >= 0.0) {
                return Err(MpcError::Config("slack_penalty must be >= 0".into()));
            }
        }
        let end = t0 + steps;
        if self.prices.len() < end {
            return Err(MpcError::Config(format!(
                "price forecast too short: need {end}, have {}",
                self.prices.len()
            )));
        }
        if self.prices[..end].iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(MpcError::Config("prices must be finite and >= 0".into()));
        }
        if self.disturbances.len() < end {
            return Err(MpcError::Config(format!(
                "disturbance forecast too short: need {end}, have {}",
                self.disturbances.len()
            )));
        }
        if self.y_min.len() < end || self.y_max.len() < end {
            return Err(MpcError::Config(format!(
                "comfort band too short: need {end}, have {}/{}",
                self.y_min.len(),
                self.y_max.len()
            )));
        }
        for t in t0..end {
            if self.disturbances[t].len() != model.n_disturbances() {
                return Err(MpcError::Config(format!(
                    "disturbance at step {t} has wrong dimension"
                )));
            }
            if self.y_min[t].len() != model.n_outputs() || self.y_max[t].len() != model.n_outputs()
            {
                return Err(MpcError::Config(format!(
                    "comfort band at step {t} has wrong dimension"
                )));
            }
            for o in 0..model.n_outputs() {
                if !(self.y_min[t][o] <= self.y_max[t][o]) {
                    return Err(MpcError::Config(format!(
                        "comfort band at step {t}, output {o} is empty"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// An open-loop schedule over one window. `cost` is the transacted-energy
/// cost `sum_k price[k] * p_total[k]`; slack penalties never enter it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleTrajectory {
    pub u: Vec<DVector<f64>>,
    pub p_cd: Vec<f64>,
    pub p_total: Vec<f64>,
    pub cost: f64,
}

/// Per-zone chords of the fan cubic over `[lo, hi]` as (slope, intercept)
/// pairs. The cubic must be convex on the interval for the chords to
/// over-approximate it.
fn fan_chords(
    model: &BuildingThermalModel,
    zone: usize,
    segments: usize,
) -> Result<Vec<(f64, f64)>, MpcError> {
    let lo = model.u_min[zone];
    let hi = model.u_max[zone];
    let f = &model.fan_coeffs;
    let second = |u: f64| 6.0 * f.c1 * u + 2.0 * f.c2;
    if second(lo) < -1e-9 || second(hi) < -1e-9 {
        return Err(MpcError::Solver {
            detail: format!(
                "fan curve not convex on [{lo}, {hi}] for zone {zone}; \
                 the linear-program route requires a convex fan curve"
            ),
            best: None,
        });
    }
    if hi - lo < 1e-12 {
        return Ok(vec![(0.0, f.eval(lo))]);
    }
    let mut chords = Vec::with_capacity(segments);
    for s in 0..segments {
        let v0 = lo + (hi - lo) * s as f64 / segments as f64;
        let v1 = lo + (hi - lo) * (s + 1) as f64 / segments as f64;
        let a = (f.eval(v1) - f.eval(v0)) / (v1 - v0);
        let b = f.eval(v0) - a * v0;
        chords.push((a, b));
    }
    Ok(chords)
}

/// Affine map from the stacked controls to the window outputs:
/// `y_j = consts[j] + sum_{i<j} gains[j][i] * u_i`. `y_0` is the constant
/// pre-step output.
struct OutputMaps {
    consts: Vec<DVector<f64>>,
    gains: Vec<Vec<DMatrix<f64>>>,
}

fn output_maps(
    model: &BuildingThermalModel,
    x0: &ThermalState,
    cfg: &MpcConfig,
) -> OutputMaps {
    let w = cfg.window;
    let n_x = model.n_states();
    let mut a_pow = Vec::with_capacity(w + 1);
    a_pow.push(DMatrix::<f64>::identity(n_x, n_x));
    for j in 1..=w {
        let next = &a_pow[j - 1] * &model.a;
        a_pow.push(next);
    }

    let mut consts = Vec::with_capacity(w);
    let mut gains = Vec::with_capacity(w);
    for j in 0..w {
        // x_j = A^j x0 + sum_{i<j} A^{j-1-i} (B u_i + E d_i)
        let mut xc = &a_pow[j] * &x0.x;
        for i in 0..j {
            xc += &a_pow[j - 1 - i] * (&model.e * &cfg.disturbances[x0.t + i]);
        }
        consts.push(&model.c * xc);
        let mut row_gains = Vec::with_capacity(j);
        for i in 0..j {
            row_gains.push(&model.c * &a_pow[j - 1 - i] * &model.b);
        }
        gains.push(row_gains);
    }
    OutputMaps { consts, gains }
}

/// Solve the exact battery subproblem for a fixed airflow plan:
/// `min sum price[k] p[k]` subject to the SOC chain, rate limits, and
/// `p[k] >= -p_hvac[k]` (no export).
fn battery_schedule(
    bess: &BessParams,
    soc0: f64,
    prices: &[f64],
    p_hvac: &[f64],
) -> Result<Vec<f64>, MpcError> {
    let w = prices.len();
    let beta = bess.soc_per_kw();
    let decay = 1.0 - bess.eta;

    let mut lower = Vec::with_capacity(w);
    let mut upper = Vec::with_capacity(w);
    for k in 0..w {
        let lo = (-bess.d_r).max(-p_hvac[k]);
        if lo > bess.c_r {
            return Err(MpcError::Infeasible {
                detail: format!(
                    "no-export rule unsatisfiable at window step {k}: \
                     hvac power {} below -c_r",
                    p_hvac[k]
                ),
            });
        }
        lower.push(lo);
        upper.push(bess.c_r);
    }
    let mut lp = LpProblem::new(prices.to_vec(), lower, upper)
        .map_err(|e| MpcError::Config(e.to_string()))?;
    // soc_{k+1} = decay^{k+1} soc0 + beta * sum_i decay^{k-i} p_i
    for k in 0..w {
        let base = decay.powi(k as i32 + 1) * soc0;
        let coeffs: Vec<(usize, f64)> = (0..=k)
            .map(|i| (i, beta * decay.powi((k - i) as i32)))
            .collect();
        lp.add_sparse_row(&coeffs, Cmp::Ge, bess.e_min - base)
            .map_err(|e| MpcError::Config(e.to_string()))?;
        lp.add_sparse_row(&coeffs, Cmp::Le, bess.e_max - base)
            .map_err(|e| MpcError::Config(e.to_string()))?;
    }
    match lp.solve() {
        Ok(sol) => Ok(sol.x),
        Err(LpError::Infeasible) => Err(MpcError::Infeasible {
            detail: "battery SOC chain infeasible over the window".into(),
        }),
        Err(e) => Err(MpcError::Solver {
            detail: e.to_string(),
            best: None,
        }),
    }
}

/// Nudge a battery plan so the exact SOC recursion stays within bounds.
/// Adjustments are at float-rounding scale; anything larger means the plan
/// was genuinely infeasible and is left for the validator to flag.
fn snap_battery_plan(bess: &BessParams, soc0: f64, p: &mut [f64]) {
    let beta = bess.soc_per_kw();
    let decay = 1.0 - bess.eta;
    let mut soc = soc0;
    for pk in p.iter_mut() {
        *pk = pk.clamp(-bess.d_r, bess.c_r);
        let mut next = decay * soc + beta * *pk;
        for _ in 0..4 {
            if next > bess.e_max {
                *pk = (bess.e_max - decay * soc) / beta;
            } else if next < bess.e_min {
                *pk = (bess.e_min - decay * soc) / beta;
            } else {
                break;
            }
            *pk = pk.clamp(-bess.d_r, bess.c_r);
            let candidate = decay * soc + beta * *pk;
            if candidate == next {
                break;
            }
            next = candidate;
        }
        soc = (decay * soc + beta * *pk).clamp(bess.e_min, bess.e_max);
    }
}

fn assemble_trajectory(
    model: &BuildingThermalModel,
    bess: &BessParams,
    soc0: f64,
    prices: &[f64],
    u: Vec<DVector<f64>>,
    mut p: Vec<f64>,
) -> Result<ScheduleTrajectory, MpcError> {
    snap_battery_plan(bess, soc0, &mut p);
    let mut p_total = Vec::with_capacity(u.len());
    let mut cost = 0.0;
    for (k, uk) in u.iter().enumerate() {
        let ph = hvac_power(model, uk)?;
        let pt = ph + p[k];
        cost += prices[k] * pt;
        p_total.push(pt);
    }
    Ok(ScheduleTrajectory {
        u,
        p_cd: p,
        p_total,
        cost,
    })
}

/// Solve the horizon problem from `(x0, soc0)`, reading forecasts at
/// absolute indices `x0.t..x0.t+window`.
pub fn solve_horizon(
    model: &BuildingThermalModel,
    bess: &BessParams,
    x0: &ThermalState,
    soc0: &BessState,
    cfg: &MpcConfig,
) -> Result<ScheduleTrajectory, MpcError> {
    cfg.validate(model, x0.t, cfg.window)?;
    if x0.x.len() != model.n_states() {
        return Err(ModelError::DimensionMismatch {
            what: "state vector",
            expected: model.n_states(),
            got: x0.x.len(),
        }
        .into());
    }
    if !(soc0.soc >= bess.e_min && soc0.soc <= bess.e_max) {
        return Err(BessError::SocBounds {
            soc: soc0.soc,
            e_min: bess.e_min,
            e_max: bess.e_max,
        }
        .into());
    }

    let w = cfg.window;
    let n_u = model.n_controls();
    let n_y = model.n_outputs();
    let t0 = x0.t;
    let prices = &cfg.prices[t0..t0 + w];
    let maps = output_maps(model, x0, cfg);

    // The window's first output is fixed by the initial state.
    for o in 0..n_y {
        let y0 = maps.consts[0][o];
        if (y0 < cfg.y_min[t0][o] - 1e-9 || y0 > cfg.y_max[t0][o] + 1e-9)
            && cfg.slack_penalty.is_none()
        {
            return Err(MpcError::Infeasible {
                detail: format!(
                    "initial output {o} = {y0} outside comfort band \
                     [{}, {}] at step {t0}",
                    cfg.y_min[t0][o], cfg.y_max[t0][o]
                ),
            });
        }
    }

    // Variable layout: u (w*n_u) | h (w*n_u) | p (w) | comfort slacks.
    let u_off = |k: usize, z: usize| k * n_u + z;
    let h_off = |k: usize, z: usize| w * n_u + k * n_u + z;
    let p_off = |k: usize| 2 * w * n_u + k;
    let n_base = 2 * w * n_u + w;
    let n_slacks = if cfg.slack_penalty.is_some() {
        2 * n_y * w.saturating_sub(1)
    } else {
        0
    };
    let n_vars = n_base + n_slacks;

    let chords: Vec<Vec<(f64, f64)>> = (0..n_u)
        .map(|z| fan_chords(model, z, cfg.fan_segments))
        .collect::<Result<_, _>>()?;

    let mut objective = vec![0.0; n_vars];
    let mut lower = vec![0.0; n_vars];
    let mut upper = vec![0.0; n_vars];
    for k in 0..w {
        for z in 0..n_u {
            lower[u_off(k, z)] = model.u_min[z];
            upper[u_off(k, z)] = model.u_max[z];
        }
    }
    // Fan-epigraph variable bounds: PWL extremes occur at chord knots.
    for z in 0..n_u {
        let f = &model.fan_coeffs;
        let lo = model.u_min[z];
        let hi = model.u_max[z];
        let m = cfg.fan_segments;
        let mut fmin = f64::INFINITY;
        let mut fmax = f64::NEG_INFINITY;
        for s in 0..=m {
            let v = lo + (hi - lo) * s as f64 / m as f64;
            fmin = fmin.min(f.eval(v));
            fmax = fmax.max(f.eval(v));
        }
        for k in 0..w {
            lower[h_off(k, z)] = fmin - 1.0;
            upper[h_off(k, z)] = fmax + 1.0;
        }
    }
    for k in 0..w {
        lower[p_off(k)] = -bess.d_r;
        upper[p_off(k)] = bess.c_r;
        objective[p_off(k)] = prices[k];
        for z in 0..n_u {
            objective[h_off(k, z)] = prices[k];
        }
    }
    if let Some(penalty) = cfg.slack_penalty {
        for s in 0..n_slacks {
            let idx = n_base + s;
            lower[idx] = 0.0;
            upper[idx] = f64::INFINITY;
            objective[idx] = penalty;
        }
    }

    let mut lp =
        LpProblem::new(objective, lower, upper).map_err(|e| MpcError::Config(e.to_string()))?;

    // h_{k,z} >= a*u_{k,z} + b for every chord.
    for k in 0..w {
        for z in 0..n_u {
            for &(a, b) in &chords[z] {
                lp.add_sparse_row(&[(h_off(k, z), 1.0), (u_off(k, z), -a)], Cmp::Ge, b)
                    .map_err(|e| MpcError::Config(e.to_string()))?;
            }
        }
    }
    // No export: sum_z h_{k,z} + p_k >= 0.
    for k in 0..w {
        let mut terms: Vec<(usize, f64)> = (0..n_u).map(|z| (h_off(k, z), 1.0)).collect();
        terms.push((p_off(k), 1.0));
        lp.add_sparse_row(&terms, Cmp::Ge, 0.0)
            .map_err(|e| MpcError::Config(e.to_string()))?;
    }
    // Comfort band for window steps 1..w-1 (step 0 is fixed, later steps
    // enter as the window recedes).
    let mut slack_cursor = n_base;
    for j in 1..w {
        for o in 0..n_y {
            let mut terms: Vec<(usize, f64)> = Vec::new();
            for i in 0..j {
                for z in 0..n_u {
                    let g = maps.gains[j][i][(o, z)];
                    if g != 0.0 {
                        terms.push((u_off(i, z), g));
                    }
                }
            }
            let (lo_rhs, hi_rhs) = (
                cfg.y_min[t0 + j][o] - maps.consts[j][o],
                cfg.y_max[t0 + j][o] - maps.consts[j][o],
            );
            if cfg.slack_penalty.is_some() {
                let s_lo = slack_cursor;
                let s_hi = slack_cursor + 1;
                slack_cursor += 2;
                let mut lo_terms = terms.clone();
                lo_terms.push((s_lo, 1.0));
                lp.add_sparse_row(&lo_terms, Cmp::Ge, lo_rhs)
                    .map_err(|e| MpcError::Config(e.to_string()))?;
                let mut hi_terms = terms.clone();
                hi_terms.push((s_hi, -1.0));
                lp.add_sparse_row(&hi_terms, Cmp::Le, hi_rhs)
                    .map_err(|e| MpcError::Config(e.to_string()))?;
            } else {
                lp.add_sparse_row(&terms, Cmp::Ge, lo_rhs)
                    .map_err(|e| MpcError::Config(e.to_string()))?;
                lp.add_sparse_row(&terms, Cmp::Le, hi_rhs)
                    .map_err(|e| MpcError::Config(e.to_string()))?;
            }
        }
    }
    // SOC bounds after each step.
    let beta = bess.soc_per_kw();
    let decay = 1.0 - bess.eta;
    for k in 0..w {
        let base = decay.powi(k as i32 + 1) * soc0.soc;
        let terms: Vec<(usize, f64)> = (0..=k)
            .map(|i| (p_off(i), beta * decay.powi((k - i) as i32)))
            .collect();
        lp.add_sparse_row(&terms, Cmp::Ge, bess.e_min - base)
            .map_err(|e| MpcError::Config(e.to_string()))?;
        lp.add_sparse_row(&terms, Cmp::Le, bess.e_max - base)
            .map_err(|e| MpcError::Config(e.to_string()))?;
    }

    let sol = match lp.solve() {
        Ok(s) => s,
        Err(LpError::Infeasible) => {
            return Err(MpcError::Infeasible {
                detail: "no airflow and battery plan satisfies the window constraints".into(),
            })
        }
        Err(e) => {
            return Err(MpcError::Solver {
                detail: e.to_string(),
                best: None,
            })
        }
    };

    let mut u: Vec<DVector<f64>> = Vec::with_capacity(w);
    for k in 0..w {
        u.push(DVector::from_fn(n_u, |z, _| {
            sol.x[u_off(k, z)].clamp(model.u_min[z], model.u_max[z])
        }));
    }
    let p_hvac: Vec<f64> = u
        .iter()
        .map(|uk| hvac_power(model, uk))
        .collect::<Result<_, _>>()?;
    let p = battery_schedule(bess, soc0.soc, prices, &p_hvac)?;
    let mut traj = assemble_trajectory(model, bess, soc0.soc, prices, u, p)?;

    if cfg.polish {
        traj = polish_schedule(model, bess, x0, soc0, cfg, traj)?;
    }
    Ok(traj)
}

/// Coordinate-wise projected local search on the continuous fan cubic.
/// Keeps comfort feasibility by construction and re-solves the battery
/// schedule for every accepted move.
fn polish_schedule(
    model: &BuildingThermalModel,
    bess: &BessParams,
    x0: &ThermalState,
    soc0: &BessState,
    cfg: &MpcConfig,
    mut best: ScheduleTrajectory,
) -> Result<ScheduleTrajectory, MpcError> {
    let w = cfg.window;
    let n_u = model.n_controls();
    let t0 = x0.t;
    let prices = &cfg.prices[t0..t0 + w];
    let maps = output_maps(model, x0, cfg);

    let comfort_ok = |u: &[DVector<f64>]| -> bool {
        for j in 1..w {
            let mut y = maps.consts[j].clone();
            for i in 0..j {
                y += &maps.gains[j][i] * &u[i];
            }
            for o in 0..model.n_outputs() {
                if y[o] < cfg.y_min[t0 + j][o] - 1e-9 || y[o] > cfg.y_max[t0 + j][o] + 1e-9 {
                    return false;
                }
            }
        }
        true
    };

    for _sweep in 0..3 {
        let mut improved = false;
        for k in 0..w {
            for z in 0..n_u {
                let span = model.u_max[z] - model.u_min[z];
                for frac in [0.25, 0.05, 0.01] {
                    for dir in [-1.0, 1.0] {
                        let delta = dir * frac * span;
                        if delta == 0.0 {
                            continue;
                        }
                        let mut u = best.u.clone();
                        let cand = (u[k][z] + delta).clamp(model.u_min[z], model.u_max[z]);
                        if cand == u[k][z] {
                            continue;
                        }
                        u[k][z] = cand;
                        if !comfort_ok(&u) {
                            continue;
                        }
                        let p_hvac: Vec<f64> = u
                            .iter()
                            .map(|uk| hvac_power(model, uk))
                            .collect::<Result<_, _>>()?;
                        let Ok(p) = battery_schedule(bess, soc0.soc, prices, &p_hvac) else {
                            continue;
                        };
                        let cand_traj =
                            assemble_trajectory(model, bess, soc0.soc, prices, u, p)?;
                        if cand_traj.cost < best.cost - 1e-12 {
                            best = cand_traj;
                            improved = true;
                        }
                    }
                }
            }
        }
        if !improved {
            break;
        }
    }
    Ok(best)
}

/// One receding-horizon step: solve the window, apply the first entries
/// through the plant model, return applied controls and the measured
/// post-step state.
pub fn mpc_step(
    model: &BuildingThermalModel,
    bess: &BessParams,
    x0: &ThermalState,
    soc0: &BessState,
    cfg: &MpcConfig,
) -> Result<(DVector<f64>, f64, ThermalState, BessState), MpcError> {
    let traj = solve_horizon(model, bess, x0, soc0, cfg)?;
    let u0 = traj.u[0].clone();
    let p0 = traj.p_cd[0];
    let (next_x, _y) = step_thermal(model, x0, &u0, &cfg.disturbances[x0.t])?;
    let next_soc = step_bess(bess, soc0, p0)?;
    Ok((u0, p0, next_x, next_soc))
}

/// One row of a receding-horizon run. `y` is the pre-step output at the
/// applied step; `soc` is the post-step state of charge.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonRecord {
    pub step: usize,
    pub u: DVector<f64>,
    pub p_cd: f64,
    pub p_total: f64,
    pub y: DVector<f64>,
    pub soc: f64,
}

/// Chain `steps` receding-horizon iterations through the plant model.
/// Forecasts must cover `x0.t + steps + window`.
pub fn run_receding_horizon(
    model: &BuildingThermalModel,
    bess: &BessParams,
    x0: &ThermalState,
    soc0: &BessState,
    cfg: &MpcConfig,
    steps: usize,
) -> Result<Vec<HorizonRecord>, MpcError> {
    cfg.validate(model, x0.t, steps + cfg.window)?;
    let mut records = Vec::with_capacity(steps);
    let mut x = x0.clone();
    let mut soc = *soc0;
    for _ in 0..steps {
        let t = x.t;
        let (u, p_cd, next_x, next_soc) = mpc_step(model, bess, &x, &soc, cfg)?;
        let y = &model.c * &x.x;
        let p_total = hvac_power(model, &u)? + p_cd;
        records.push(HorizonRecord {
            step: t,
            u,
            p_cd,
            p_total,
            y,
            soc: next_soc.soc,
        });
        x = next_x;
        soc = next_soc;
    }
    Ok(records)
}

/// CSV rendering of a receding-horizon run:
/// `step,u_0..,p_cd,p_total,y_0..,soc`.
pub fn records_to_csv(records: &[HorizonRecord]) -> String {
    let mut out = String::new();
    if records.is_empty() {
        out.push_str("step,p_cd,p_total,soc\n");
        return out;
    }
    let n_u = records[0].u.len();
    let n_y = records[0].y.len();
    out.push_str("step");
    for z in 0..n_u {
        out.push_str(&format!(",u_{z}"));
    }
    out.push_str(",p_cd,p_total");
    for o in 0..n_y {
        out.push_str(&format!(",y_{o}"));
    }
    out.push_str(",soc\n");
    for r in records {
        out.push_str(&r.step.to_string());
        for z in 0..n_u {
            out.push_str(&format!(",{}", r.u[z]));
        }
        out.push_str(&format!(",{},{}", r.p_cd, r.p_total));
        for o in 0..n_y {
            out.push_str(&format!(",{}", r.y[o]));
        }
        out.push_str(&format!(",{}\n", r.soc));
    }
    out
}

/// Residuals from re-checking a trajectory against every constraint by
/// direct recomputation. Independent of the solver path.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryCheck {
    pub max_control_violation: f64,
    pub max_comfort_violation: f64,
    pub max_soc_violation: f64,
    pub max_rate_violation: f64,
    pub max_export: f64,
    pub max_p_total_mismatch: f64,
    pub cost_relative_error: f64,
}

impl TrajectoryCheck {
    /// The default contract: constraint residuals within `general`,
    /// comfort within `comfort`, cost self-consistency within `cost_rel`.
    pub fn within(&self, general: f64, comfort: f64, cost_rel: f64) -> bool {
        self.max_control_violation <= general
            && self.max_comfort_violation <= comfort
            && self.max_soc_violation <= general
            && self.max_rate_violation <= general
            && self.max_export <= general
            && self.max_p_total_mismatch <= general
            && self.cost_relative_error <= cost_rel
    }
}

/// Re-check a trajectory against the model, battery, and configuration.
pub fn validate_trajectory(
    model: &BuildingThermalModel,
    bess: &BessParams,
    x0: &ThermalState,
    soc0: &BessState,
    cfg: &MpcConfig,
    traj: &ScheduleTrajectory,
) -> Result<TrajectoryCheck, MpcError> {
    let w = traj.u.len();
    if traj.p_cd.len() != w || traj.p_total.len() != w {
        return Err(MpcError::Config("trajectory length mismatch".into()));
    }
    cfg.validate(model, x0.t, w)?;
    let t0 = x0.t;
    let mut check = TrajectoryCheck::default();
    let mut x = x0.x.clone();
    let mut soc = soc0.soc;
    let mut cost = 0.0;
    let beta = bess.soc_per_kw();
    let decay = 1.0 - bess.eta;

    for k in 0..w {
        let uk = &traj.u[k];
        if uk.len() != model.n_controls() {
            return Err(MpcError::Config(format!(
                "control at step {k} has wrong dimension"
            )));
        }
        for z in 0..uk.len() {
            let viol = (model.u_min[z] - uk[z]).max(uk[z] - model.u_max[z]).max(0.0);
            check.max_control_violation = check.max_control_violation.max(viol);
        }
        let y = &model.c * &x;
        for o in 0..model.n_outputs() {
            let viol = (cfg.y_min[t0 + k][o] - y[o])
                .max(y[o] - cfg.y_max[t0 + k][o])
                .max(0.0);
            check.max_comfort_violation = check.max_comfort_violation.max(viol);
        }
        let p_cd = traj.p_cd[k];
        let rate_viol = (-bess.d_r - p_cd).max(p_cd - bess.c_r).max(0.0);
        check.max_rate_violation = check.max_rate_violation.max(rate_viol);

        let ph: f64 = uk.iter().map(|&uz| model.fan_coeffs.eval(uz)).sum();
        let pt = ph + p_cd;
        check.max_p_total_mismatch = check
            .max_p_total_mismatch
            .max((pt - traj.p_total[k]).abs());
        check.max_export = check.max_export.max((-pt).max(0.0));
        cost += cfg.prices[t0 + k] * traj.p_total[k];

        soc = decay * soc + beta * p_cd;
        let soc_viol = (bess.e_min - soc).max(soc - bess.e_max).max(0.0);
        check.max_soc_violation = check.max_soc_violation.max(soc_viol);

        x = &model.a * &x + &model.b * uk + &model.e * &cfg.disturbances[t0 + k];
    }
    let denom = traj.cost.abs().max(1.0);
    check.cost_relative_error = (cost - traj.cost).abs() / denom;
    Ok(check)
}
