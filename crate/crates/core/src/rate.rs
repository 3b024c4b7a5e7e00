//! Compression-rate and FLOPs accounting.

use crate::io::LayerRecord;
use crate::realize::{CompressedLayer, Variant};
use crate::tensor::ConvShape;

/// Fraction of a layer's parameters removed after pruning `t1` input channels
/// and removing `t2` of its `r` singular values.
///
/// With `t2 = 0` the layer stays a single pruned convolution and the rate is
/// `t1 / c`. Otherwise it becomes a `k x k` conv with `r - t2` filters followed
/// by a `1 x 1` conv, and the rate can be negative when few singular values
/// are removed.
pub fn compression_rate(n: usize, c: usize, k: usize, t1: usize, t2: usize, r: usize) -> f64 {
    debug_assert!(t1 <= c && t2 <= r);
    if t2 == 0 {
        t1 as f64 / c as f64
    } else {
        let kept = (r - t2) as u128 * ((c - t1) as u128 * (k * k) as u128 + n as u128);
        let total = n as u128 * c as u128 * (k * k) as u128;
        1.0 - kept as f64 / total as f64
    }
}

/// Parameter count of the realized layer for the given removals.
pub fn compressed_params(shape: ConvShape, t1: usize, t2: usize) -> u64 {
    let (n, c, kk) = (shape.n as u64, shape.c as u64, shape.kernel_area() as u64);
    if t2 == 0 {
        n * (c - t1 as u64) * kk
    } else {
        let r_bar = (shape.full_rank() - t2) as u64;
        r_bar * ((c - t1 as u64) * kk + n)
    }
}

/// Multiply-accumulates of the dense layer, `n*c*k*k*h_out*w_out`.
pub fn layer_flops(rec: &LayerRecord) -> u64 {
    rec.shape().params() * rec.spatial()
}

/// Multiply-accumulates of a realized layer at the record's output size.
pub fn compressed_flops(layer: &CompressedLayer, rec: &LayerRecord) -> u64 {
    layer.param_count() * rec.spatial()
}

/// Parameters of a realized layer.
pub fn realized_params(layer: &CompressedLayer) -> u64 {
    match &layer.variant {
        Variant::PrunedOnly { weights } => weights.shape().params(),
        Variant::Decomposed { w1, w2 } => w1.shape().params() + w2.shape().params(),
    }
}
