//! Multi-step heuristic compression of a single layer.
//!
//! A unit's importance is its own information loss plus `gamma` times the
//! average loss of removing each remaining unit after it:
//!
//! ```text
//! P_o = I_o + gamma / (|U| - 1) * sum_{i in U \ o} I_{i|o}
//! ```
//!
//! [`importance_bruteforce`] evaluates that definition directly. With
//! `theta = W_o - W`, `m = |U| - 1` and `(U_o, S_o, V_o)` the SVD of the
//! candidate `W_o`, the sum collapses to
//!
//! ```text
//! P_o = (1 + gamma) S[G^2 theta^2] - 4 gamma / m S[G^2 theta W_o]
//!     + gamma / m S[G^2 W_o^2] + gamma / m S[G^2 phi(U_o^2 S_o^2 (V_o^T)^2)]
//! ```
//!
//! because removing every remaining channel, or every remaining singular
//! value, of `W_o` each sum to `-W_o`. [`importance_fast`] evaluates this form.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LayerContext;
use crate::realize::{realize, CompressedLayer};
use crate::state::{ApproxState, SvdFactors};
use crate::tensor::{GradientTensor, WeightTensor};
use crate::unit::{Unit, UnitKinds};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeuristicConfig {
    pub gamma: f64,
    /// Units removed per scoring round, as a fraction of `c + r`.
    pub interval_fraction: f64,
    pub target_rate: f64,
    pub use_fast_metric: bool,
    pub kinds: UnitKinds,
}

impl HeuristicConfig {
    pub fn new(target_rate: f64) -> Self {
        Self {
            target_rate,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        if !(self.interval_fraction > 0.0 && self.interval_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "interval fraction must lie in (0, 1], got {}",
                self.interval_fraction
            )));
        }
        if !(self.target_rate > 0.0 && self.target_rate < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "target rate must lie in (0, 1), got {}",
                self.target_rate
            )));
        }
        Ok(())
    }
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            interval_fraction: 0.01,
            target_rate: 0.5,
            use_fast_metric: true,
            kinds: UnitKinds::Both,
        }
    }
}

/// `T = floor(fraction * (c + r))`, at least 1.
pub fn scoring_interval(unit_count: usize, fraction: f64) -> usize {
    // the nudge keeps exact products such as 0.01 * 100 from rounding down
    ((fraction * unit_count as f64 + 1e-9).floor() as usize).max(1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitImportance {
    pub unit: Unit,
    pub score: f64,
}

fn check_scorable(state: &ApproxState, unit: Unit) -> Result<()> {
    if !state.contains(unit) {
        return Err(Error::InvalidUnit(unit));
    }
    if state.remaining_count() < 2 {
        return Err(Error::SingletonUnitSet);
    }
    Ok(())
}

/// Importance by explicit enumeration of every follow-up removal.
pub fn importance_bruteforce(
    state: &ApproxState,
    ctx: &LayerContext,
    unit: Unit,
    gamma: f64,
) -> Result<f64> {
    check_scorable(state, unit)?;
    let candidate = state.with_removed(unit)?;
    let own = ctx.loss(candidate.approx_matrix());
    let rest = candidate.remaining_units();
    let follow: f64 = rest
        .iter()
        .map(|&i| Ok(ctx.loss(&candidate.candidate_matrix(i)?)))
        .sum::<Result<f64>>()?;
    Ok(own + gamma * follow / rest.len() as f64)
}

/// Importance through the closed form; see the module docs.
pub fn importance_fast(
    state: &ApproxState,
    ctx: &LayerContext,
    unit: Unit,
    gamma: f64,
) -> Result<f64> {
    FastScorer::new(state, ctx).score(unit, gamma)
}

/// `sum_{a,b} G2[a,b] u[a]^2 v[b]^2 sigma^2` for each of the first `slots`
/// singular triples.
fn squared_component_sums(svd: &SvdFactors, grad_sq: &DMatrix<f64>, slots: usize) -> Vec<f64> {
    (0..slots)
        .map(|j| {
            let u2 = svd.u.column(j).map(|x| x * x);
            let v2 = svd.v_t.row(j).map(|x| x * x).transpose();
            let s = svd.sigma[j];
            (u2.transpose() * grad_sq * v2)[(0, 0)] * s * s
        })
        .collect()
}

/// Closed-form scoring against one frozen state.
pub struct FastScorer<'a> {
    state: &'a ApproxState,
    ctx: &'a LayerContext,
    /// Per retained slot contribution to the last closed-form term.
    slot_terms: Vec<f64>,
    slot_total: f64,
}

impl<'a> FastScorer<'a> {
    pub fn new(state: &'a ApproxState, ctx: &'a LayerContext) -> Self {
        let slot_terms = squared_component_sums(state.svd(), &ctx.grad_sq, state.retained_rank());
        let slot_total = slot_terms.iter().sum();
        Self {
            state,
            ctx,
            slot_terms,
            slot_total,
        }
    }

    pub fn score(&self, unit: Unit, gamma: f64) -> Result<f64> {
        check_scorable(self.state, unit)?;
        let candidate = self.state.candidate_matrix(unit)?;
        let spectral = match unit {
            Unit::SingularValue(p) => self.slot_total - self.slot_terms[p],
            Unit::Channel(_) => {
                let svd = SvdFactors::compute(&candidate);
                squared_component_sums(&svd, &self.ctx.grad_sq, self.state.retained_rank())
                    .iter()
                    .sum()
            }
        };

        let (mut own, mut cross, mut energy) = (0.0, 0.0, 0.0);
        for ((g2, wo), w) in self
            .ctx
            .grad_sq
            .iter()
            .zip(candidate.iter())
            .zip(self.ctx.weight.iter())
        {
            let theta = wo - w;
            own += g2 * theta * theta;
            cross += g2 * theta * wo;
            energy += g2 * wo * wo;
        }
        let m = (self.state.remaining_count() - 1) as f64;
        Ok((1.0 + gamma) * own - 4.0 * gamma / m * cross
            + gamma / m * energy
            + gamma / m * spectral)
    }
}

/// Scores `units` against the frozen `state`.
pub fn score_units(
    state: &ApproxState,
    ctx: &LayerContext,
    units: &[Unit],
    gamma: f64,
    fast: bool,
) -> Result<Vec<UnitImportance>> {
    let scorer = fast.then(|| FastScorer::new(state, ctx));
    units
        .par_iter()
        .map(|&unit| {
            let score = match &scorer {
                Some(s) => s.score(unit, gamma)?,
                None => importance_bruteforce(state, ctx, unit, gamma)?,
            };
            Ok(UnitImportance { unit, score })
        })
        .collect()
}

/// Ascending score, then channels before singular values, then lower index.
pub fn rank_units(scores: &mut [UnitImportance]) {
    scores.sort_by(|a, b| {
        a.score
            .total_cmp(&b.score)
            .then(b.unit.is_channel().cmp(&a.unit.is_channel()))
            .then(a.unit.index().cmp(&b.unit.index()))
    });
}

/// Result of compressing one layer.
#[derive(Clone, Debug)]
pub struct LayerCompression {
    pub layer: CompressedLayer,
    pub t1: usize,
    pub t2: usize,
    pub rate: f64,
    /// The layer was rebuilt from its pruned channels alone.
    pub pruning_fallback: bool,
    /// Removed units, at the positions they had when removed.
    pub removed: Vec<Unit>,
    pub rounds: usize,
}

fn is_last_of_kind(state: &ApproxState, unit: Unit) -> bool {
    match unit {
        Unit::Channel(_) => state.shape().c - state.t1() <= 1,
        Unit::SingularValue(_) => state.retained_rank() <= 1,
    }
}

/// Compresses one layer until its rate reaches `cfg.target_rate`.
pub fn compress_layer(
    w: &WeightTensor,
    g: &GradientTensor,
    cfg: &HeuristicConfig,
    name: &str,
) -> Result<LayerCompression> {
    cfg.validate()?;
    let ctx = LayerContext::new(w, g)?;
    let shape = w.shape();
    let interval = scoring_interval(shape.unit_count(), cfg.interval_fraction);
    let mut state = ApproxState::new(w);
    let mut removed = Vec::new();
    let mut rounds = 0;

    loop {
        let eligible: Vec<Unit> = state
            .remaining_units()
            .into_iter()
            .filter(|&u| cfg.kinds.allows(u) && !is_last_of_kind(&state, u))
            .collect();
        if eligible.is_empty() {
            return Err(Error::UnreachableTarget {
                target: cfg.target_rate,
                best: state.compression_rate(),
            });
        }
        let mut scores = score_units(&state, &ctx, &eligible, cfg.gamma, cfg.use_fast_metric)?;
        rank_units(&mut scores);
        rounds += 1;

        // positions in the frozen ranking shift as singular values are removed
        let mut removed_positions: Vec<usize> = Vec::new();
        for chosen in scores.iter().take(interval) {
            let unit = match chosen.unit {
                Unit::SingularValue(p) => {
                    Unit::SingularValue(p - removed_positions.iter().filter(|&&q| q < p).count())
                }
                u => u,
            };
            if is_last_of_kind(&state, unit) {
                continue;
            }
            state.remove(unit)?;
            if let Unit::SingularValue(_) = chosen.unit {
                removed_positions.push(chosen.unit.index());
            }
            removed.push(unit);

            let rate = state.compression_rate();
            if rate >= cfg.target_rate {
                return Ok(LayerCompression {
                    layer: realize(&state, name)?,
                    t1: state.t1(),
                    t2: state.t2(),
                    rate,
                    pruning_fallback: false,
                    removed,
                    rounds,
                });
            }
            let pruned_fraction = state.t1() as f64 / shape.c as f64;
            if pruned_fraction >= cfg.target_rate {
                let rebuilt = ApproxState::from_pruned(w, state.pruned_channels().iter().copied())?;
                return Ok(LayerCompression {
                    layer: realize(&rebuilt, name)?,
                    t1: rebuilt.t1(),
                    t2: 0,
                    rate: rebuilt.compression_rate(),
                    pruning_fallback: true,
                    removed,
                    rounds,
                });
            }
        }
    }
}
