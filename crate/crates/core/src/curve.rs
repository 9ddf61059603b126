//! Price-sensitive demand-bid curves: generation by sweeping the
//! current-step price through the horizon solver, step-function evaluation,
//! and conversion to the wire message.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mpc::{solve_horizon, MpcConfig, MpcError};
use crate::thermal::{BessParams, BessState, BuildingThermalModel, ThermalState};

#[derive(Debug, Error)]
pub enum CurveError {
    #[error("curve must have at least one point")]
    Empty,
    #[error("curve prices must be finite and strictly decreasing (index {0})")]
    PricesNotDecreasing(usize),
    #[error("curve quantities must be finite and >= 0 (index {0})")]
    QuantityInvalid(usize),
    #[error("quantity must not decrease as price decreases (index {0})")]
    QuantityNotMonotone(usize),
    #[error("horizon solve infeasible at sweep price {price}: {source}")]
    InfeasibleAtPrice { price: f64, source: MpcError },
    #[error(transparent)]
    Mpc(#[from] MpcError),
}

/// One step of a demand-bid curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub price_cents: f64,
    pub quantity_kw: f64,
}

/// A finite non-increasing step function from price to demanded power.
/// Points are stored in strictly descending price order and quantities are
/// non-decreasing in that order (lower price means weakly more demand).
#[derive(Debug, Clone, PartialEq)]
pub struct PriceDemandCurve {
    points: Vec<CurvePoint>,
    pub asker_id: String,
    pub timestep: u64,
}

impl PriceDemandCurve {
    pub fn new(
        asker_id: impl Into<String>,
        timestep: u64,
        points: Vec<CurvePoint>,
    ) -> Result<Self, CurveError> {
        if points.is_empty() {
            return Err(CurveError::Empty);
        }
        for (i, p) in points.iter().enumerate() {
            if !p.price_cents.is_finite() {
                return Err(CurveError::PricesNotDecreasing(i));
            }
            if !p.quantity_kw.is_finite() || p.quantity_kw < 0.0 {
                return Err(CurveError::QuantityInvalid(i));
            }
            if i > 0 {
                if p.price_cents >= points[i - 1].price_cents {
                    return Err(CurveError::PricesNotDecreasing(i));
                }
                if p.quantity_kw < points[i - 1].quantity_kw {
                    return Err(CurveError::QuantityNotMonotone(i));
                }
            }
        }
        Ok(Self {
            points,
            asker_id: asker_id.into(),
            timestep,
        })
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    /// Largest quantity on the curve (demand at the lowest listed price).
    pub fn max_quantity(&self) -> f64 {
        self.points.last().map(|p| p.quantity_kw).unwrap_or(0.0)
    }

    pub fn max_price(&self) -> f64 {
        self.points.first().map(|p| p.price_cents).unwrap_or(0.0)
    }

    /// Demand at `price`: the quantity of the lowest-price point whose price
    /// is still >= `price` (right-continuous step function), 0 above the
    /// curve's maximum willingness-to-pay.
    pub fn demand_at(&self, price: f64) -> f64 {
        self.points
            .iter()
            .rev()
            .find(|p| p.price_cents >= price)
            .map(|p| p.quantity_kw)
            .unwrap_or(0.0)
    }

    /// Willingness-to-pay for the marginal unit at cumulative quantity `q`,
    /// i.e. the price of the cheapest step covering `(q_prev, q]`. Zero
    /// beyond the curve's maximum quantity.
    pub fn willingness_at(&self, q: f64) -> f64 {
        self.points
            .iter()
            .find(|p| p.quantity_kw >= q)
            .map(|p| p.price_cents)
            .unwrap_or(0.0)
    }

    /// Willingness-to-pay for the unit just beyond cumulative quantity `q`.
    pub fn willingness_above(&self, q: f64) -> f64 {
        self.points
            .iter()
            .find(|p| p.quantity_kw > q)
            .map(|p| p.price_cents)
            .unwrap_or(0.0)
    }
}

/// Price sweep grid for curve generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSweepConfig {
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub segments: usize,
}

impl CurveSweepConfig {
    pub fn new(lambda_lo: f64, lambda_hi: f64, segments: usize) -> Result<Self, CurveError> {
        if !(lambda_lo.is_finite() && lambda_hi.is_finite() && lambda_lo < lambda_hi) {
            return Err(CurveError::PricesNotDecreasing(0));
        }
        if segments < 2 {
            return Err(CurveError::Empty);
        }
        Ok(Self {
            lambda_lo,
            lambda_hi,
            segments,
        })
    }

    pub fn price_increment(&self) -> f64 {
        (self.lambda_hi - self.lambda_lo) / (self.segments as f64 - 1.0)
    }

    /// The sweep prices `lambda_lo + i * increment`, i = 0..segments.
    pub fn prices(&self) -> Vec<f64> {
        let inc = self.price_increment();
        (0..self.segments)
            .map(|i| self.lambda_lo + inc * i as f64)
            .collect()
    }
}

/// A generated curve together with the bookkeeping of the monotonicity
/// repair that produced it.
#[derive(Debug, Clone)]
pub struct CurveBuild {
    pub curve: PriceDemandCurve,
    pub max_repair_kw: f64,
    pub repaired_points: usize,
}

/// Assemble a curve from raw (price, quantity) sweep samples: sort by
/// descending price, repair monotonicity, and drop redundant points.
///
/// Solver tolerance can leave a higher-price sample with slightly more
/// demand than a cheaper one; the repair clips such quantities down to the
/// cheaper-price level (walking from the lowest price up) so the published
/// curve never claims more demand than the solver produced. Adjacent points
/// with equal quantity collapse to the highest-price one, which leaves the
/// step function unchanged.
pub fn build_curve(
    asker_id: impl Into<String>,
    timestep: u64,
    raw: Vec<(f64, f64)>,
) -> Result<CurveBuild, CurveError> {
    if raw.is_empty() {
        return Err(CurveError::Empty);
    }
    let mut pts: Vec<CurvePoint> = raw
        .into_iter()
        .map(|(price_cents, quantity_kw)| CurvePoint {
            price_cents,
            quantity_kw,
        })
        .collect();
    pts.sort_by(|a, b| {
        b.price_cents
            .partial_cmp(&a.price_cents)
            .expect("curve prices must not be NaN")
    });

    let mut max_repair = 0.0_f64;
    let mut repaired = 0usize;
    let mut cap = pts.last().expect("nonempty").quantity_kw;
    for i in (0..pts.len()).rev() {
        if pts[i].quantity_kw > cap {
            let delta = pts[i].quantity_kw - cap;
            log::debug!(
                "isotonic repair at price {}: {} -> {} kW",
                pts[i].price_cents,
                pts[i].quantity_kw,
                cap
            );
            pts[i].quantity_kw = cap;
            max_repair = max_repair.max(delta);
            repaired += 1;
        } else {
            cap = pts[i].quantity_kw;
        }
    }

    let mut deduped: Vec<CurvePoint> = Vec::with_capacity(pts.len());
    for p in pts {
        match deduped.last() {
            Some(prev) if prev.quantity_kw == p.quantity_kw => {}
            _ => deduped.push(p),
        }
    }

    Ok(CurveBuild {
        curve: PriceDemandCurve::new(asker_id, timestep, deduped)?,
        max_repair_kw: max_repair,
        repaired_points: repaired,
    })
}

/// Generate an asker's demand-bid curve by sweeping the current-step price
/// over `sweep` and solving the horizon problem at each price. Each sample
/// is the first-step total power of the horizon solution.
pub fn generate_curve(
    model: &BuildingThermalModel,
    bess: &BessParams,
    x0: &ThermalState,
    soc0: &BessState,
    mpc_cfg: &MpcConfig,
    sweep: &CurveSweepConfig,
    asker_id: impl Into<String>,
) -> Result<CurveBuild, CurveError> {
    let mut raw = Vec::with_capacity(sweep.segments);
    for price in sweep.prices() {
        let mut cfg = mpc_cfg.clone();
        if cfg.prices.len() <= x0.t {
            return Err(CurveError::Mpc(MpcError::Config(format!(
                "price forecast does not reach timestep {}",
                x0.t
            ))));
        }
        cfg.prices[x0.t] = price;
        let traj = solve_horizon(model, bess, x0, soc0, &cfg).map_err(|e| match e {
            MpcError::Infeasible { .. } => CurveError::InfeasibleAtPrice { price, source: e },
            other => CurveError::Mpc(other),
        })?;
        raw.push((price, traj.p_total[0]));
    }
    build_curve(asker_id, x0.t as u64, raw)
}
