//! Conversion of an approximated weight into compact stored factors.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::state::ApproxState;
use crate::tensor::{ConvShape, WeightTensor};

#[derive(Clone, Debug, PartialEq)]
pub enum Variant {
    /// A single convolution over the kept input channels, `(n, c - t1, k, k)`.
    PrunedOnly { weights: WeightTensor },
    /// A `(r_bar, c - t1, k, k)` convolution followed by an `(n, r_bar, 1, 1)` one.
    Decomposed { w1: WeightTensor, w2: WeightTensor },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompressedLayer {
    pub variant: Variant,
    /// Kept input channels of the source layer, ascending.
    pub kept_channels: Vec<usize>,
    pub source_layer: String,
}

impl CompressedLayer {
    pub fn new(
        variant: Variant,
        kept_channels: Vec<usize>,
        source_layer: impl Into<String>,
    ) -> Result<Self> {
        let layer = Self {
            variant,
            kept_channels,
            source_layer: source_layer.into(),
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn validate(&self) -> Result<()> {
        let kept = self.kept_channels.len();
        if kept == 0 {
            return Err(Error::Realize("no input channels kept".into()));
        }
        if self.kept_channels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Realize(
                "kept channels must be strictly ascending".into(),
            ));
        }
        match &self.variant {
            Variant::PrunedOnly { weights } => {
                if weights.shape().c != kept {
                    return Err(Error::Realize(format!(
                        "pruned weight has {} channels but {kept} are kept",
                        weights.shape().c
                    )));
                }
            }
            Variant::Decomposed { w1, w2 } => {
                let (s1, s2) = (w1.shape(), w2.shape());
                if s1.n == 0 || s1.c != kept || s2.k != 1 || s2.c != s1.n {
                    return Err(Error::Realize(format!(
                        "inconsistent factors {s1:?} and {s2:?} for {kept} kept channels"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Filters of the original layer.
    pub fn out_channels(&self) -> usize {
        match &self.variant {
            Variant::PrunedOnly { weights } => weights.shape().n,
            Variant::Decomposed { w2, .. } => w2.shape().n,
        }
    }

    pub fn kernel(&self) -> usize {
        match &self.variant {
            Variant::PrunedOnly { weights } => weights.shape().k,
            Variant::Decomposed { w1, .. } => w1.shape().k,
        }
    }

    /// Retained rank of a decomposed layer.
    pub fn r_bar(&self) -> Option<usize> {
        match &self.variant {
            Variant::PrunedOnly { .. } => None,
            Variant::Decomposed { w1, .. } => Some(w1.shape().n),
        }
    }

    pub fn param_count(&self) -> u64 {
        crate::rate::realized_params(self)
    }

    /// Dense `n x c*k*k` matrix of the layer over the source's `c` channels,
    /// with zero columns at pruned channels.
    pub fn expand(&self, source_channels: usize) -> DMatrix<f64> {
        let k = self.kernel();
        let area = k * k;
        let compact = match &self.variant {
            Variant::PrunedOnly { weights } => weights.matricize(),
            Variant::Decomposed { w1, w2 } => w2.matricize() * w1.matricize(),
        };
        let mut full = DMatrix::zeros(self.out_channels(), source_channels * area);
        for (j, &ch) in self.kept_channels.iter().enumerate() {
            full.columns_mut(ch * area, area)
                .copy_from(&compact.columns(j * area, area));
        }
        full
    }
}

/// Realizes the state's approximation as a compact layer.
///
/// Without singular-value removals the pruned channel slices are dropped.
/// Otherwise the retained factors are split as `sqrt(S) Vt` (the `k x k`
/// stage) and `U sqrt(S)` (the `1 x 1` stage).
pub fn realize(state: &ApproxState, source_layer: &str) -> Result<CompressedLayer> {
    let shape = state.shape();
    let kept = state.kept_channels();
    if kept.is_empty() {
        return Err(Error::Realize("all input channels are pruned".into()));
    }
    let area = shape.kernel_area();
    let approx = state.approx_matrix();

    let select_columns = |m: &DMatrix<f64>| {
        let mut out = DMatrix::zeros(m.nrows(), kept.len() * area);
        for (j, &ch) in kept.iter().enumerate() {
            out.columns_mut(j * area, area)
                .copy_from(&m.columns(ch * area, area));
        }
        out
    };

    let variant = if state.t2() == 0 {
        let compact_shape = ConvShape::new(shape.n, kept.len(), shape.k)?;
        Variant::PrunedOnly {
            weights: WeightTensor::dematricize(&select_columns(approx), compact_shape)?,
        }
    } else {
        let r_bar = state.retained_rank();
        if r_bar == 0 {
            return Err(Error::Realize("no singular values retained".into()));
        }
        let svd = state.svd();
        let mut m1 = svd.v_t.rows(0, r_bar).into_owned();
        let mut m2 = svd.u.columns(0, r_bar).into_owned();
        for j in 0..r_bar {
            let root = svd.sigma[j].sqrt();
            m1.row_mut(j).scale_mut(root);
            m2.column_mut(j).scale_mut(root);
        }
        Variant::Decomposed {
            w1: WeightTensor::dematricize(
                &select_columns(&m1),
                ConvShape::new(r_bar, kept.len(), shape.k)?,
            )?,
            w2: WeightTensor::dematricize(&m2, ConvShape::new(shape.n, r_bar, 1)?)?,
        }
    };
    CompressedLayer::new(variant, kept, source_layer)
}
