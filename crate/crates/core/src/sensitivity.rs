//! Per-layer compression sensitivity.
//!
//! Every unit is scored once on the original weight, then units are removed
//! greedily in ascending order while recording `(R, I)` after each removal,
//! where `I` is the loss normalized by the loss of removing everything. The
//! resulting curve is summarized by a fitted model `I = a * exp(b * R)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{unit_information_loss, LayerContext};
use crate::state::ApproxState;
use crate::tensor::{GradientTensor, WeightTensor};
use crate::unit::{sequential_positions, Unit};

/// Points with loss at or below this are left out of the fit.
pub const FIT_EPSILON: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    pub a: f64,
    pub b: f64,
    pub r_squared: f64,
}

impl ExpFit {
    pub fn eval(&self, rate: f64) -> f64 {
        self.a * (self.b * rate).exp()
    }

    /// Slope `dI/dR = a * b * exp(b * R)`.
    pub fn sensitivity(&self, rate: f64) -> f64 {
        self.a * self.b * (self.b * rate).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCurve {
    /// `(R, I)` in removal order.
    pub points: Vec<(f64, f64)>,
    pub a: f64,
    pub b: f64,
    pub r_squared: f64,
}

impl SensitivityCurve {
    pub fn from_points(points: Vec<(f64, f64)>) -> Result<Self> {
        let fit = fit_exponential(&points)?;
        Ok(Self {
            points,
            a: fit.a,
            b: fit.b,
            r_squared: fit.r_squared,
        })
    }

    pub fn fit(&self) -> ExpFit {
        ExpFit {
            a: self.a,
            b: self.b,
            r_squared: self.r_squared,
        }
    }
}

/// The greedy removal sequence and the curve it produced.
#[derive(Clone, Debug)]
pub struct CurveTrace {
    /// Units in removal order, as identified on the original weight.
    pub order: Vec<Unit>,
    /// The same units at the positions they occupied when removed.
    pub applied: Vec<Unit>,
    pub points: Vec<(f64, f64)>,
}

/// Initial ranking: ascending loss, then singular values before channels,
/// then lower index.
fn initial_order(state: &ApproxState, ctx: &LayerContext) -> Result<Vec<Unit>> {
    let mut scored = state
        .remaining_units()
        .into_iter()
        .map(|u| Ok((unit_information_loss(state, ctx, u)?, u)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|(sa, ua), (sb, ub)| {
        sa.total_cmp(sb)
            .then(ua.is_channel().cmp(&ub.is_channel()))
            .then(ua.index().cmp(&ub.index()))
    });
    Ok(scored.into_iter().map(|(_, u)| u).collect())
}

pub fn build_curve_trace(w: &WeightTensor, g: &GradientTensor) -> Result<CurveTrace> {
    let ctx = LayerContext::new(w, g)?;
    let normalizer = ctx.normalizer();
    if normalizer <= 0.0 {
        return Err(Error::ZeroNormalizer);
    }
    let mut state = ApproxState::new(w);
    let order = initial_order(&state, &ctx)?;
    let applied = sequential_positions(&order);

    let mut points = Vec::with_capacity(order.len());
    for &unit in &applied {
        state.remove(unit)?;
        let info = ctx.loss(state.approx_matrix()) / normalizer;
        points.push((state.compression_rate(), info));
    }
    Ok(CurveTrace {
        order,
        applied,
        points,
    })
}

/// `(R, I)` after each of the `c + r` greedy removals.
pub fn build_curve(w: &WeightTensor, g: &GradientTensor) -> Result<Vec<(f64, f64)>> {
    Ok(build_curve_trace(w, g)?.points)
}

/// Least-squares fit of `ln I = ln a + b R` over points with `I > FIT_EPSILON`.
///
/// `r_squared` is measured on the original scale over all points.
pub fn fit_exponential(points: &[(f64, f64)]) -> Result<ExpFit> {
    let mut usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(_, i)| i > FIT_EPSILON)
        .map(|&(r, i)| (r, i.ln()))
        .collect();
    if usable.len() < 3 {
        return Err(Error::TooFewPoints(usable.len()));
    }
    // fixed summation order makes the fit independent of input order
    usable.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let count = usable.len() as f64;
    let mean_x = usable.iter().map(|p| p.0).sum::<f64>() / count;
    let mean_y = usable.iter().map(|p| p.1).sum::<f64>() / count;
    let sxx: f64 = usable.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    if sxx <= f64::EPSILON * mean_x.abs().max(1.0) * count {
        return Err(Error::DegenerateFit);
    }
    let sxy: f64 = usable.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let b = sxy / sxx;
    let a = (mean_y - b * mean_x).exp();

    let mut ordered: Vec<(f64, f64)> = points.to_vec();
    ordered.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mean_i = ordered.iter().map(|p| p.1).sum::<f64>() / ordered.len() as f64;
    let ss_tot: f64 = ordered.iter().map(|p| (p.1 - mean_i).powi(2)).sum();
    let ss_res: f64 = ordered
        .iter()
        .map(|p| (p.1 - a * (b * p.0).exp()).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res <= 1e-24 {
        1.0
    } else {
        0.0
    };
    Ok(ExpFit { a, b, r_squared })
}
