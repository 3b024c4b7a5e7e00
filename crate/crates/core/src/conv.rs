//! Direct convolution used to validate realized layers.
//!
//! Valid padding only: `h_out = (h_in - k) / stride + 1`.

use crate::error::{Error, Result};
use crate::realize::{CompressedLayer, Variant};
use crate::tensor::WeightTensor;

/// A `(channels, height, width)` feature map, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "feature map ({channels}, {height}, {width}) needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Keeps only the listed channels, in order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<Self> {
        let plane = self.height * self.width;
        let mut data = Vec::with_capacity(channels.len() * plane);
        for &c in channels {
            if c >= self.channels {
                return Err(Error::ChannelOutOfRange {
                    index: c,
                    channels: self.channels,
                });
            }
            data.extend_from_slice(&self.data[c * plane..(c + 1) * plane]);
        }
        Self::new(channels.len(), self.height, self.width, data)
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &FeatureMap) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Direct convolution of `x` with a dense weight.
pub fn conv2d(w: &WeightTensor, x: &FeatureMap, stride: usize) -> Result<FeatureMap> {
    let s = w.shape();
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    if x.channels != s.c || x.height < s.k || x.width < s.k {
        return Err(Error::Shape(format!(
            "input ({}, {}, {}) incompatible with weight {:?}",
            x.channels, x.height, x.width, s
        )));
    }
    let h_out = (x.height - s.k) / stride + 1;
    let w_out = (x.width - s.k) / stride + 1;
    let mut out = vec![0.0; s.n * h_out * w_out];
    for f in 0..s.n {
        for oy in 0..h_out {
            for ox in 0..w_out {
                let mut acc = 0.0;
                for c in 0..s.c {
                    for ky in 0..s.k {
                        for kx in 0..s.k {
                            acc +=
                                w.get(f, c, ky, kx) * x.get(c, oy * stride + ky, ox * stride + kx);
                        }
                    }
                }
                out[(f * h_out + oy) * w_out + ox] = acc;
            }
        }
    }
    FeatureMap::new(s.n, h_out, w_out, out)
}

/// Runs a realized layer on the full (unpruned) input of its source layer.
///
/// Pruned channels are dropped from `x` first; a decomposed layer applies the
/// `k x k` stage with `stride` and then the `1 x 1` stage.
pub fn conv_compressed(
    layer: &CompressedLayer,
    x: &FeatureMap,
    stride: usize,
) -> Result<FeatureMap> {
    let x = x.select_channels(&layer.kept_channels)?;
    match &layer.variant {
        Variant::PrunedOnly { weights } => conv2d(weights, &x, stride),
        Variant::Decomposed { w1, w2 } => conv2d(w2, &conv2d(w1, &x, stride)?, 1),
    }
}

/// Either form of layer accepted by [`reference_conv`].
pub enum ConvWeights<'a> {
    Dense(&'a WeightTensor),
    Compressed(&'a CompressedLayer),
}

pub fn reference_conv(
    weights: ConvWeights<'_>,
    x: &FeatureMap,
    stride: usize,
) -> Result<FeatureMap> {
    match weights {
        ConvWeights::Dense(w) => conv2d(w, x, stride),
        ConvWeights::Compressed(layer) => conv_compressed(layer, x, stride),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ConvShape;

    #[test]
    fn permutation_1x1_permutes_channels() {
        // out[0] = in[2], out[1] = in[0], out[2] = in[1]
        let shape = ConvShape::new(3, 3, 1).unwrap();
        let w = WeightTensor::new(shape, vec![0., 0., 1., 1., 0., 0., 0., 1., 0.]).unwrap();
        let x = FeatureMap::new(3, 2, 2, (0..12).map(|v| v as f64).collect()).unwrap();
        let y = conv2d(&w, &x, 1).unwrap();
        assert_eq!(&y.data[0..4], &x.data[8..12]);
        assert_eq!(&y.data[4..8], &x.data[0..4]);
        assert_eq!(&y.data[8..12], &x.data[4..8]);
    }

    #[test]
    fn stride_and_valid_padding() {
        let w = WeightTensor::new(ConvShape::new(1, 1, 2).unwrap(), vec![1.0; 4]).unwrap();
        let x = FeatureMap::new(1, 5, 5, vec![1.0; 25]).unwrap();
        let y = conv2d(&w, &x, 2).unwrap();
        assert_eq!((y.height, y.width), (2, 2));
        assert!(y.data.iter().all(|&v| v == 4.0));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let w = WeightTensor::zeros(ConvShape::new(1, 2, 3).unwrap());
        let x = FeatureMap::new(3, 4, 4, vec![0.0; 48]).unwrap();
        assert!(matches!(conv2d(&w, &x, 1), Err(Error::Shape(_))));
    }
}
