//! First-order Taylor estimate of the loss change caused by approximating a
//! layer's weight: `S[(G * (W_approx - W))^2]`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::state::{zero_channel, ApproxState};
use crate::tensor::{GradientTensor, WeightTensor};
use crate::unit::Unit;

/// Matricized original weight and averaged gradient of one layer.
#[derive(Clone, Debug)]
pub struct LayerContext {
    pub weight: DMatrix<f64>,
    pub grad: DMatrix<f64>,
    /// Elementwise square of `grad`.
    pub grad_sq: DMatrix<f64>,
}

impl LayerContext {
    pub fn new(w: &WeightTensor, g: &GradientTensor) -> Result<Self> {
        if w.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "gradient {:?} does not match weight {:?}",
                g.shape(),
                w.shape()
            )));
        }
        let grad = g.matricize();
        Ok(Self {
            weight: w.matricize(),
            grad_sq: grad.component_mul(&grad),
            grad,
        })
    }

    /// Un-normalized information loss of replacing the weight by `approx`.
    pub fn loss(&self, approx: &DMatrix<f64>) -> f64 {
        self.grad_sq
            .iter()
            .zip(approx.iter().zip(self.weight.iter()))
            .map(|(g2, (a, w))| g2 * (a - w) * (a - w))
            .sum()
    }

    /// Loss of removing everything, `S[(G * W)^2]`.
    pub fn normalizer(&self) -> f64 {
        self.grad_sq
            .iter()
            .zip(self.weight.iter())
            .map(|(g2, w)| g2 * w * w)
            .sum()
    }
}

impl ApproxState {
    /// The approximation after removing `unit`, without refactorizing.
    pub fn candidate_matrix(&self, unit: Unit) -> Result<DMatrix<f64>> {
        self.check_unit(unit)?;
        let mut m = self.approx_matrix().clone();
        match unit {
            Unit::Channel(ch) => zero_channel(&mut m, self.shape(), ch),
            Unit::SingularValue(p) => {
                m -= self.svd().component(p);
                for &ch in self.pruned_channels() {
                    zero_channel(&mut m, self.shape(), ch);
                }
            }
        }
        Ok(m)
    }
}

/// `S[(G * (f(W_approx, unit) - W))^2]` for one candidate unit.
pub fn unit_information_loss(state: &ApproxState, ctx: &LayerContext, unit: Unit) -> Result<f64> {
    Ok(ctx.loss(&state.candidate_matrix(unit)?))
}
