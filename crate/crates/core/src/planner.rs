//! Global allocation of per-layer compression rates.
//!
//! All layers are driven to a common sensitivity `I' = a b exp(b R)`, which
//! gives `R = ln(I' / (a b)) / b` per layer. The shared `I'` is found by
//! descent on `(sum_i F_i R_i(I') - C F)^2`, taken in `ln I'`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensitivity::ExpFit;

/// Lower bound applied to `I'` after every step.
pub const MIN_I_BAR: f64 = 1e-12;

/// Fits below this coefficient of determination are not trusted by the planner.
pub const MIN_R_SQUARED: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Step size in `ln I'`; `1.0` is a full Newton step on the constraint.
    pub eta: f64,
    pub initial_i_bar: f64,
    /// Stop once the squared FLOPs error is at most this.
    pub stop_threshold: f64,
    pub max_iters: usize,
    /// Upper clamp for per-layer rates.
    pub r_max: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            initial_i_bar: 0.1,
            stop_threshold: 1e4,
            max_iters: 1_000_000,
            r_max: 0.95,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePlan {
    /// Rates clamped to `[0, r_max]`.
    pub rates: Vec<f64>,
    pub unclamped: Vec<f64>,
    pub clamped: Vec<bool>,
    pub i_bar: f64,
    pub iterations: usize,
    /// `sum F_i R_i` with the unclamped rates.
    pub achieved_flops_sum: f64,
    /// `sum F_i R_i` with the clamped rates.
    pub clamped_flops_sum: f64,
    /// `C * F`.
    pub target: f64,
}

/// `R = ln(i_bar / (a b)) / b`.
pub fn rate_from_sensitivity(a: f64, b: f64, i_bar: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && i_bar > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "rate_from_sensitivity needs positive inputs, got a={a}, b={b}, i_bar={i_bar}"
        )));
    }
    Ok((i_bar / (a * b)).ln() / b)
}

/// Signed FLOPs error `sum F_i/b_i ln(i_bar/(a_i b_i)) - C F` and its slope
/// numerator `K = sum F_i/b_i`.
fn constraint(models: &[(f64, f64)], flops: &[f64], target_flops: f64, i_bar: f64) -> (f64, f64) {
    let mut h = -target_flops;
    let mut k = 0.0;
    for (&(a, b), &f) in models.iter().zip(flops) {
        h += f / b * (i_bar / (a * b)).ln();
        k += f / b;
    }
    (h, k)
}

pub fn plan_rates(
    models: &[(f64, f64)],
    flops: &[f64],
    total_flops: f64,
    target_rate: f64,
    cfg: &PlannerConfig,
) -> Result<RatePlan> {
    if models.is_empty() || models.len() != flops.len() {
        return Err(Error::InvalidArgument(format!(
            "need one FLOPs entry per model, got {} models and {} entries",
            models.len(),
            flops.len()
        )));
    }
    if !(target_rate > 0.0 && target_rate < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target rate must lie in (0, 1), got {target_rate}"
        )));
    }
    if !(cfg.eta > 0.0 && cfg.initial_i_bar > 0.0 && cfg.stop_threshold >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "invalid planner config {cfg:?}"
        )));
    }
    for (&(a, b), &f) in models.iter().zip(flops) {
        if b <= 0.0 {
            return Err(Error::NonPositiveSlope { b });
        }
        if !(a > 0.0 && f > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "models need a > 0 and F > 0, got a={a}, F={f}"
            )));
        }
    }

    let target = target_rate * total_flops;
    let mut i_bar = cfg.initial_i_bar;
    let mut iterations = 0;
    loop {
        let (h, k) = constraint(models, flops, target, i_bar);
        if h * h <= cfg.stop_threshold {
            break;
        }
        if iterations >= cfg.max_iters {
            return Err(Error::NotConverged {
                iterations,
                i_bar,
                squared_error: h * h,
            });
        }
        // h is linear in ln(i_bar) with slope k, so descend on ln(i_bar)
        i_bar = (i_bar * (-cfg.eta * h / k).exp()).max(MIN_I_BAR);
        iterations += 1;
    }

    let unclamped = models
        .iter()
        .map(|&(a, b)| rate_from_sensitivity(a, b, i_bar))
        .collect::<Result<Vec<_>>>()?;
    let rates: Vec<f64> = unclamped.iter().map(|r| r.clamp(0.0, cfg.r_max)).collect();
    let clamped = unclamped.iter().zip(&rates).map(|(u, r)| u != r).collect();
    let dot = |rs: &[f64]| rs.iter().zip(flops).map(|(r, f)| r * f).sum::<f64>();
    Ok(RatePlan {
        achieved_flops_sum: dot(&unclamped),
        clamped_flops_sum: dot(&rates),
        rates,
        unclamped,
        clamped,
        i_bar,
        iterations,
        target,
    })
}

/// A layer's fitted model and FLOPs, as consumed by [`plan_layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct LayerModel {
    pub name: String,
    pub fit: ExpFit,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedLayer {
    pub name: String,
    pub a: f64,
    pub b: f64,
    pub r_squared: f64,
    pub flops: u64,
    #[serde(rename = "R_target")]
    pub r_target: f64,
    #[serde(rename = "R_unclamped")]
    pub r_unclamped: f64,
    pub clamped: bool,
    /// Assigned the global rate because the model was unusable.
    pub fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkPlan {
    pub target_rate: f64,
    pub total_flops: u64,
    pub target_flops: f64,
    pub i_bar: Option<f64>,
    pub iterations: usize,
    pub achieved_flops_sum: f64,
    pub clamped_flops_sum: f64,
    pub layers: Vec<PlannedLayer>,
    pub warnings: Vec<String>,
}

impl NetworkPlan {
    pub fn rate_for(&self, name: &str) -> Option<f64> {
        self.layers
            .iter()
            .find(|l| l.name == name)
            .map(|l| l.r_target)
    }
}

/// Plans rates for named layers, assigning the global rate to layers whose
/// model has `b <= 0` or `r_squared < MIN_R_SQUARED`.
///
/// `total_flops` covers the whole network, including layers not listed.
pub fn plan_layers(
    layers: &[LayerModel],
    total_flops: u64,
    target_rate: f64,
    cfg: &PlannerConfig,
) -> Result<NetworkPlan> {
    if !(target_rate > 0.0 && target_rate < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target rate must lie in (0, 1), got {target_rate}"
        )));
    }
    let mut warnings = Vec::new();
    let usable: Vec<bool> = layers
        .iter()
        .map(|l| {
            let ok = l.fit.b > 0.0 && l.fit.a > 0.0 && l.fit.r_squared >= MIN_R_SQUARED;
            if !ok {
                warnings.push(format!(
                    "layer `{}`: unusable model (a={}, b={}, R2={}); assigned global rate {}",
                    l.name, l.fit.a, l.fit.b, l.fit.r_squared, target_rate
                ));
            }
            ok
        })
        .collect();

    let fallback_flops: u64 = layers
        .iter()
        .zip(&usable)
        .filter(|(_, &ok)| !ok)
        .map(|(l, _)| l.flops)
        .sum();
    let models: Vec<(f64, f64)> = layers
        .iter()
        .zip(&usable)
        .filter(|(_, &ok)| ok)
        .map(|(l, _)| (l.fit.a, l.fit.b))
        .collect();
    let flops: Vec<f64> = layers
        .iter()
        .zip(&usable)
        .filter(|(_, &ok)| ok)
        .map(|(l, _)| l.flops as f64)
        .collect();

    let solved = if models.is_empty() {
        None
    } else {
        let remaining = total_flops.saturating_sub(fallback_flops) as f64;
        Some(plan_rates(&models, &flops, remaining, target_rate, cfg)?)
    };

    let mut planned = Vec::with_capacity(layers.len());
    let mut next = 0;
    for (l, &ok) in layers.iter().zip(&usable) {
        let (r_target, r_unclamped, clamped) = match (&solved, ok) {
            (Some(plan), true) => {
                let i = next;
                next += 1;
                (plan.rates[i], plan.unclamped[i], plan.clamped[i])
            }
            _ => (target_rate, target_rate, false),
        };
        planned.push(PlannedLayer {
            name: l.name.clone(),
            a: l.fit.a,
            b: l.fit.b,
            r_squared: l.fit.r_squared,
            flops: l.flops,
            r_target,
            r_unclamped,
            clamped,
            fallback: !ok,
        });
    }
    let dot =
        |f: fn(&PlannedLayer) -> f64| planned.iter().map(|l| l.flops as f64 * f(l)).sum::<f64>();
    let achieved_flops_sum = dot(|l| l.r_unclamped);
    let clamped_flops_sum = dot(|l| l.r_target);
    if planned.iter().any(|l| l.clamped) {
        warnings.push(format!(
            "some rates were clamped to [0, {}]; clamped FLOPs sum {clamped_flops_sum:.0} vs target {:.0}",
            cfg.r_max,
            target_rate * total_flops as f64
        ));
    }
    Ok(NetworkPlan {
        target_rate,
        total_flops,
        target_flops: target_rate * total_flops as f64,
        i_bar: solved.as_ref().map(|p| p.i_bar),
        iterations: solved.as_ref().map_or(0, |p| p.iterations),
        achieved_flops_sum,
        clamped_flops_sum,
        layers: planned,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_at_reference_sensitivities() {
        let (a, b) = (0.3, 2.5);
        assert!(rate_from_sensitivity(a, b, a * b).unwrap().abs() < 1e-15);
        assert!((rate_from_sensitivity(a, b, a * b * b.exp()).unwrap() - 1.0).abs() < 1e-12);
        let r = rate_from_sensitivity(0.01, 4.6, 0.1).unwrap();
        assert!((r - (0.1f64 / 0.046).ln() / 4.6).abs() < 1e-15);
        assert!((r - 0.168811).abs() < 1e-5);
    }

    #[test]
    fn rate_rejects_non_positive_inputs() {
        assert!(rate_from_sensitivity(0.0, 1.0, 1.0).is_err());
        assert!(rate_from_sensitivity(1.0, -1.0, 1.0).is_err());
        assert!(rate_from_sensitivity(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn single_layer_gets_the_global_rate() {
        let f = 3.0e7;
        let plan = plan_rates(&[(0.02, 3.0)], &[f], f, 0.4, &PlannerConfig::default()).unwrap();
        assert!((plan.unclamped[0] - 0.4).abs() <= 100.0 / f);
    }

    #[test]
    fn identical_layers_share_the_rate() {
        let f = 5.0e7;
        let plan = plan_rates(
            &[(0.01, 4.0), (0.01, 4.0)],
            &[f, f],
            2.0 * f,
            0.5,
            &PlannerConfig::default(),
        )
        .unwrap();
        assert!((plan.unclamped[0] - 0.5).abs() < 1e-6);
        assert_eq!(plan.unclamped[0], plan.unclamped[1]);
    }

    #[test]
    fn non_positive_slope_is_an_error() {
        let err = plan_rates(&[(0.1, 0.0)], &[1e6], 1e6, 0.5, &PlannerConfig::default());
        assert!(matches!(err, Err(Error::NonPositiveSlope { .. })));
    }

    #[test]
    fn non_convergence_reports_last_state() {
        let cfg = PlannerConfig {
            max_iters: 2,
            eta: 1e-3,
            ..PlannerConfig::default()
        };
        match plan_rates(&[(0.01, 4.0)], &[1e8], 1e8, 0.5, &cfg) {
            Err(Error::NotConverged { iterations, .. }) => assert_eq!(iterations, 2),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn unusable_models_fall_back_to_global_rate() {
        let layers = vec![
            LayerModel {
                name: "good".into(),
                fit: ExpFit {
                    a: 0.01,
                    b: 4.0,
                    r_squared: 0.95,
                },
                flops: 1_000_000,
            },
            LayerModel {
                name: "flat".into(),
                fit: ExpFit {
                    a: 1.0,
                    b: 0.0,
                    r_squared: 1.0,
                },
                flops: 2_000_000,
            },
        ];
        let plan = plan_layers(&layers, 3_000_000, 0.5, &PlannerConfig::default()).unwrap();
        assert_eq!(plan.rate_for("flat"), Some(0.5));
        assert!(plan.layers[1].fallback);
        assert_eq!(plan.warnings.len(), 1);
        assert!((plan.layers[0].r_unclamped - 0.5).abs() < 1e-4);
    }
}
