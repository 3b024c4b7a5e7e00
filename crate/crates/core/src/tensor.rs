//! Dense 4-D convolution weights and their matrix view.
//!
//! A weight tensor has shape `(n, c, k, k)`: `n` filters, `c` input channels and
//! a square `k x k` kernel, stored row-major. Matricization flattens each filter
//! into one row, so the `n x c*k*k` matrix shares the tensor's memory order and
//! input channel `j` owns the column block `j*k*k .. (j+1)*k*k`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensions of a square-kernel convolution weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvShape {
    pub n: usize,
    pub c: usize,
    pub k: usize,
}

impl ConvShape {
    pub fn new(n: usize, c: usize, k: usize) -> Result<Self> {
        if n == 0 || c == 0 || k == 0 {
            return Err(Error::Shape(format!(
                "dimensions must be positive, got ({n}, {c}, {k}, {k})"
            )));
        }
        Ok(Self { n, c, k })
    }

    /// Elements per input-channel slice of one filter.
    pub fn kernel_area(&self) -> usize {
        self.k * self.k
    }

    /// Width of the matricized weight, `c*k*k`.
    pub fn cols(&self) -> usize {
        self.c * self.kernel_area()
    }

    pub fn len(&self) -> usize {
        self.n * self.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of singular values of the matricized weight, `min(n, c*k*k)`.
    pub fn full_rank(&self) -> usize {
        self.n.min(self.cols())
    }

    /// Total number of compression units (input channels plus singular values).
    pub fn unit_count(&self) -> usize {
        self.c + self.full_rank()
    }

    pub fn params(&self) -> u64 {
        self.len() as u64
    }
}

/// Row-major `(n, c, k, k)` tensor of finite values.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightTensor {
    shape: ConvShape,
    data: Vec<f64>,
}

/// Dataset-averaged loss gradient with the same layout as its weight.
pub type GradientTensor = WeightTensor;

impl WeightTensor {
    pub fn new(shape: ConvShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::Shape(format!(
                "expected {} elements for {:?}, got {}",
                shape.len(),
                shape,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite tensor value at element {i}"
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: ConvShape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn shape(&self) -> ConvShape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, filter: usize, channel: usize, y: usize, x: usize) -> usize {
        let k = self.shape.k;
        ((filter * self.shape.c + channel) * k + y) * k + x
    }

    #[inline]
    pub fn get(&self, filter: usize, channel: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(filter, channel, y, x)]
    }

    /// Squared Frobenius norm of a channel slice `(:, channel, :, :)`.
    pub fn channel_energy(&self, channel: usize) -> f64 {
        let area = self.shape.kernel_area();
        (0..self.shape.n)
            .flat_map(|f| {
                let start = self.index(f, channel, 0, 0);
                self.data[start..start + area].iter()
            })
            .map(|v| v * v)
            .sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Flattens to the `n x c*k*k` matrix (the inverse of the reshaping map).
    pub fn matricize(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.shape.n, self.shape.cols(), &self.data)
    }

    /// Reshapes an `n x c*k*k` matrix back into a tensor of `shape`.
    pub fn dematricize(m: &DMatrix<f64>, shape: ConvShape) -> Result<Self> {
        if m.nrows() != shape.n || m.ncols() != shape.cols() {
            return Err(Error::Shape(format!(
                "cannot reshape {}x{} matrix into {:?}",
                m.nrows(),
                m.ncols(),
                shape
            )));
        }
        let mut data = Vec::with_capacity(shape.len());
        for row in m.row_iter() {
            data.extend(row.iter().copied());
        }
        Self::new(shape, data)
    }
}
