//! Discrete-time building thermal dynamics, HVAC fan power, and battery
//! state-of-charge dynamics. These are the physical primitives every asker
//! simulates; all types are immutable values and all operations are pure.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("control out of bounds in zone {zone}: {value} not in [{lo}, {hi}]")]
    ControlBounds {
        zone: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("invalid model: {0}")]
    Invalid(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BessError {
    #[error("charge/discharge rate {p_cd} kW outside [-{d_r}, {c_r}]")]
    Rate { p_cd: f64, d_r: f64, c_r: f64 },
    #[error("state of charge {soc} outside [{e_min}, {e_max}]")]
    SocBounds { soc: f64, e_min: f64, e_max: f64 },
    #[error("invalid battery parameters: {0}")]
    Invalid(String),
}

/// Cubic fan-power polynomial coefficients: `c1*u^3 + c2*u^2 + c3*u + c4`
/// in kW for `u` in kg/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FanCoeffs {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

impl FanCoeffs {
    pub fn new(c1: f64, c2: f64, c3: f64, c4: f64) -> Self {
        Self { c1, c2, c3, c4 }
    }

    /// Fan power of a single zone at air mass flow `u`.
    pub fn eval(&self, u: f64) -> f64 {
        ((self.c1 * u + self.c2) * u + self.c3) * u + self.c4
    }

    fn finite(&self) -> bool {
        self.c1.is_finite() && self.c2.is_finite() && self.c3.is_finite() && self.c4.is_finite()
    }
}

/// Linear time-invariant building thermal model
/// `x' = A x + B u + E d`, `y = C x`, with per-zone air-mass-flow bounds
/// and a shared fan-power polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildingThermalModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub fan_coeffs: FanCoeffs,
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
}

impl BuildingThermalModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        e: DMatrix<f64>,
        c: DMatrix<f64>,
        fan_coeffs: FanCoeffs,
        u_min: DVector<f64>,
        u_max: DVector<f64>,
    ) -> Result<Self, ModelError> {
        let n_x = a.nrows();
        if a.ncols() != n_x {
            return Err(ModelError::Invalid(format!(
                "state matrix must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n_x {
            return Err(ModelError::DimensionMismatch {
                what: "input matrix rows",
                expected: n_x,
                got: b.nrows(),
            });
        }
        if e.nrows() != n_x {
            return Err(ModelError::DimensionMismatch {
                what: "disturbance matrix rows",
                expected: n_x,
                got: e.nrows(),
            });
        }
        if c.ncols() != n_x {
            return Err(ModelError::DimensionMismatch {
                what: "output matrix columns",
                expected: n_x,
                got: c.ncols(),
            });
        }
        if c.nrows() == 0 {
            return Err(ModelError::Invalid("output dimension must be >= 1".into()));
        }
        let n_u = b.ncols();
        if u_min.len() != n_u {
            return Err(ModelError::DimensionMismatch {
                what: "u_min length",
                expected: n_u,
                got: u_min.len(),
            });
        }
        if u_max.len() != n_u {
            return Err(ModelError::DimensionMismatch {
                what: "u_max length",
                expected: n_u,
                got: u_max.len(),
            });
        }
        for z in 0..n_u {
            if !(u_min[z] <= u_max[z]) {
                return Err(ModelError::Invalid(format!(
                    "u_min[{z}] = {} exceeds u_max[{z}] = {}",
                    u_min[z], u_max[z]
                )));
            }
        }
        if !fan_coeffs.finite() {
            return Err(ModelError::Invalid("fan coefficients must be finite".into()));
        }
        Ok(Self {
            a,
            b,
            e,
            c,
            fan_coeffs,
            u_min,
            u_max,
        })
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_controls(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_disturbances(&self) -> usize {
        self.e.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn check_control(&self, u: &DVector<f64>) -> Result<(), ModelError> {
        if u.len() != self.n_controls() {
            return Err(ModelError::DimensionMismatch {
                what: "control vector",
                expected: self.n_controls(),
                got: u.len(),
            });
        }
        for z in 0..u.len() {
            if !(u[z] >= self.u_min[z] && u[z] <= self.u_max[z]) {
                return Err(ModelError::ControlBounds {
                    zone: z,
                    value: u[z],
                    lo: self.u_min[z],
                    hi: self.u_max[z],
                });
            }
        }
        Ok(())
    }
}

/// Thermal state: wall/room temperatures plus the timestep it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalState {
    pub x: DVector<f64>,
    pub t: usize,
}

impl ThermalState {
    pub fn new(x: DVector<f64>, t: usize) -> Self {
        Self { x, t }
    }
}

/// Battery parameters. `tau` is the step length in hours and SOC is a
/// fraction of `q_bat` (kWh), which makes the update rule dimensionally
/// explicit. The round-trip efficiency `rho` applies to charge and
/// discharge alike.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BessParams {
    pub eta: f64,
    pub rho: f64,
    pub q_bat: f64,
    pub tau: f64,
    pub e_min: f64,
    pub e_max: f64,
    pub d_r: f64,
    pub c_r: f64,
}

impl BessParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        eta: f64,
        rho: f64,
        q_bat: f64,
        tau: f64,
        e_min: f64,
        e_max: f64,
        d_r: f64,
        c_r: f64,
    ) -> Result<Self, BessError> {
        if !(0.0..1.0).contains(&eta) {
            return Err(BessError::Invalid(format!("eta = {eta} not in [0, 1)")));
        }
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(BessError::Invalid(format!("rho = {rho} not in (0, 1]")));
        }
        if !(q_bat > 0.0) {
            return Err(BessError::Invalid(format!("q_bat = {q_bat} must be > 0")));
        }
        if !(tau > 0.0) {
            return Err(BessError::Invalid(format!("tau = {tau} must be > 0")));
        }
        if !(0.0 <= e_min && e_min < e_max && e_max <= 1.0) {
            return Err(BessError::Invalid(format!(
                "SOC bounds [{e_min}, {e_max}] must satisfy 0 <= e_min < e_max <= 1"
            )));
        }
        if !(d_r >= 0.0) || !(c_r >= 0.0) {
            return Err(BessError::Invalid(format!(
                "rate limits d_r = {d_r}, c_r = {c_r} must be >= 0"
            )));
        }
        Ok(Self {
            eta,
            rho,
            q_bat,
            tau,
            e_min,
            e_max,
            d_r,
            c_r,
        })
    }

    /// SOC change per kW of charge power over one step.
    pub fn soc_per_kw(&self) -> f64 {
        self.rho * self.tau / self.q_bat
    }
}

/// Battery state of charge as a fraction of capacity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BessState {
    pub soc: f64,
}

impl BessState {
    pub fn new(soc: f64, params: &BessParams) -> Result<Self, BessError> {
        if !(soc >= params.e_min && soc <= params.e_max) {
            return Err(BessError::SocBounds {
                soc,
                e_min: params.e_min,
                e_max: params.e_max,
            });
        }
        Ok(Self { soc })
    }
}

/// Advance the thermal state one step. The output `y` is computed from the
/// pre-step state: comfort constraints reference the state the controller
/// actually measured.
pub fn step_thermal(
    model: &BuildingThermalModel,
    state: &ThermalState,
    u: &DVector<f64>,
    d: &DVector<f64>,
) -> Result<(ThermalState, DVector<f64>), ModelError> {
    if state.x.len() != model.n_states() {
        return Err(ModelError::DimensionMismatch {
            what: "state vector",
            expected: model.n_states(),
            got: state.x.len(),
        });
    }
    if d.len() != model.n_disturbances() {
        return Err(ModelError::DimensionMismatch {
            what: "disturbance vector",
            expected: model.n_disturbances(),
            got: d.len(),
        });
    }
    model.check_control(u)?;

    let y = &model.c * &state.x;
    let x_next = &model.a * &state.x + &model.b * u + &model.e * d;
    Ok((ThermalState::new(x_next, state.t + 1), y))
}

/// HVAC power at control `u`: the fan polynomial applied per zone and
/// summed. A single-zone model reduces to the scalar cubic.
pub fn hvac_power(model: &BuildingThermalModel, u: &DVector<f64>) -> Result<f64, ModelError> {
    model.check_control(u)?;
    Ok(u.iter().map(|&uz| model.fan_coeffs.eval(uz)).sum())
}

/// Advance the battery one step under signed power `p_cd`
/// (charge > 0, discharge < 0).
pub fn step_bess(
    params: &BessParams,
    state: &BessState,
    p_cd: f64,
) -> Result<BessState, BessError> {
    if !(p_cd >= -params.d_r && p_cd <= params.c_r) {
        return Err(BessError::Rate {
            p_cd,
            d_r: params.d_r,
            c_r: params.c_r,
        });
    }
    let soc = (1.0 - params.eta) * state.soc + params.soc_per_kw() * p_cd;
    if !(soc >= params.e_min && soc <= params.e_max) {
        return Err(BessError::SocBounds {
            soc,
            e_min: params.e_min,
            e_max: params.e_max,
        });
    }
    Ok(BessState { soc })
}
