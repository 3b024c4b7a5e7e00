//! The evolving approximation of one layer's weight.
//!
//! `ApproxState` keeps the matricized approximation together with its thin SVD
//! and the removal bookkeeping. Singular values are kept sorted descending;
//! the first `r - t2` positions are the retained slots that may still be
//! removed. Positions past that are removed (exactly zero) or, after channel
//! pruning lowered the rank, numerically zero.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rate::compression_rate;
use crate::tensor::{ConvShape, WeightTensor};
use crate::unit::Unit;

/// Relative threshold below which a singular value counts as structurally zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Thin SVD `M = U diag(sigma) Vt` with `sigma` sorted descending.
#[derive(Clone, Debug)]
pub struct SvdFactors {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

impl SvdFactors {
    pub fn compute(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let svd = faer::Mat::from_fn(rows, cols, |i, j| m[(i, j)])
            .thin_svd()
            .expect("SVD of a finite matrix converges");
        let (fu, fs, fv) = (svd.U(), svd.S().column_vector(), svd.V());
        let p = fs.nrows();
        let u = DMatrix::from_fn(rows, p, |i, j| fu[(i, j)]);
        let v_t = DMatrix::from_fn(p, cols, |i, j| fv[(j, i)]);
        let sigma = DVector::from_fn(p, |i, _| fs[i]);

        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));
        Self::permuted(&u, &sigma, &v_t, &order)
    }

    fn permuted(
        u: &DMatrix<f64>,
        sigma: &DVector<f64>,
        v_t: &DMatrix<f64>,
        order: &[usize],
    ) -> Self {
        let u = DMatrix::from_fn(u.nrows(), order.len(), |i, j| u[(i, order[j])]);
        let v_t = DMatrix::from_fn(order.len(), v_t.ncols(), |i, j| v_t[(order[i], j)]);
        let sigma = DVector::from_fn(order.len(), |i, _| sigma[order[i]].max(0.0));
        Self { u, sigma, v_t }
    }

    /// The same factorization with slot `position` zeroed and moved last.
    pub fn without(&self, position: usize) -> Self {
        let len = self.sigma.len();
        let order: Vec<usize> = (0..len)
            .filter(|&i| i != position)
            .chain([position])
            .collect();
        let mut out = Self::permuted(&self.u, &self.sigma, &self.v_t, &order);
        out.sigma[len - 1] = 0.0;
        out
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (j, s) in self.sigma.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * &self.v_t
    }

    /// Rank-one term `sigma_j u_j v_j^T`.
    pub fn component(&self, position: usize) -> DMatrix<f64> {
        self.u.column(position) * self.v_t.row(position) * self.sigma[position]
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct ApproxState {
    shape: ConvShape,
    approx: DMatrix<f64>,
    pruned: BTreeSet<usize>,
    removed_sv: usize,
    svd: SvdFactors,
}

impl ApproxState {
    pub fn new(w: &WeightTensor) -> Self {
        let approx = w.matricize();
        let svd = SvdFactors::compute(&approx);
        Self {
            shape: w.shape(),
            approx,
            pruned: BTreeSet::new(),
            removed_sv: 0,
            svd,
        }
    }

    /// Rebuilds the state reached by pruning `channels` from `w` with no
    /// singular values removed.
    pub fn from_pruned(
        w: &WeightTensor,
        channels: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        let mut approx = w.matricize();
        let mut pruned = BTreeSet::new();
        for ch in channels {
            if ch >= w.shape().c {
                return Err(Error::ChannelOutOfRange {
                    index: ch,
                    channels: w.shape().c,
                });
            }
            if !pruned.insert(ch) {
                return Err(Error::AlreadyPruned(ch));
            }
            zero_channel(&mut approx, w.shape(), ch);
        }
        let svd = SvdFactors::compute(&approx);
        Ok(Self {
            shape: w.shape(),
            approx,
            pruned,
            removed_sv: 0,
            svd,
        })
    }

    pub fn shape(&self) -> ConvShape {
        self.shape
    }

    pub fn approx_matrix(&self) -> &DMatrix<f64> {
        &self.approx
    }

    pub fn approx(&self) -> WeightTensor {
        WeightTensor::dematricize(&self.approx, self.shape).expect("state matrix matches shape")
    }

    pub fn svd(&self) -> &SvdFactors {
        &self.svd
    }

    pub fn pruned_channels(&self) -> &BTreeSet<usize> {
        &self.pruned
    }

    pub fn is_pruned(&self, channel: usize) -> bool {
        self.pruned.contains(&channel)
    }

    /// Number of pruned input channels.
    pub fn t1(&self) -> usize {
        self.pruned.len()
    }

    /// Number of removed singular values.
    pub fn t2(&self) -> usize {
        self.removed_sv
    }

    pub fn full_rank(&self) -> usize {
        self.shape.full_rank()
    }

    /// Singular-value slots still available for removal, `r - t2`.
    pub fn retained_rank(&self) -> usize {
        self.full_rank() - self.removed_sv
    }

    /// Count of singular values above `RANK_TOLERANCE * sigma_max`.
    pub fn numerical_rank(&self) -> usize {
        let max = self.svd.sigma.iter().copied().fold(0.0, f64::max);
        if max == 0.0 {
            return 0;
        }
        self.svd
            .sigma
            .iter()
            .filter(|&&s| s > RANK_TOLERANCE * max)
            .count()
    }

    pub fn kept_channels(&self) -> Vec<usize> {
        (0..self.shape.c)
            .filter(|c| !self.pruned.contains(c))
            .collect()
    }

    /// Remaining units: unpruned channels ascending, then retained slots.
    pub fn remaining_units(&self) -> Vec<Unit> {
        self.kept_channels()
            .into_iter()
            .map(Unit::Channel)
            .chain((0..self.retained_rank()).map(Unit::SingularValue))
            .collect()
    }

    pub fn remaining_count(&self) -> usize {
        self.shape.c - self.t1() + self.retained_rank()
    }

    pub fn contains(&self, unit: Unit) -> bool {
        match unit {
            Unit::Channel(i) => i < self.shape.c && !self.pruned.contains(&i),
            Unit::SingularValue(p) => p < self.retained_rank(),
        }
    }

    pub fn compression_rate(&self) -> f64 {
        compression_rate(
            self.shape.n,
            self.shape.c,
            self.shape.k,
            self.t1(),
            self.t2(),
            self.full_rank(),
        )
    }

    pub fn check_unit(&self, unit: Unit) -> Result<()> {
        match unit {
            Unit::Channel(i) if i >= self.shape.c => Err(Error::ChannelOutOfRange {
                index: i,
                channels: self.shape.c,
            }),
            Unit::Channel(i) if self.pruned.contains(&i) => Err(Error::AlreadyPruned(i)),
            Unit::SingularValue(p) if p >= self.retained_rank() => {
                Err(Error::SingularValueNotRetained {
                    position: p,
                    retained: self.retained_rank(),
                })
            }
            _ => Ok(()),
        }
    }

    /// Zeroes input channel `channel` and refactorizes.
    pub fn prune_channel(&mut self, channel: usize) -> Result<()> {
        self.check_unit(Unit::Channel(channel))?;
        zero_channel(&mut self.approx, self.shape, channel);
        self.pruned.insert(channel);
        self.svd = SvdFactors::compute(&self.approx);
        Ok(())
    }

    /// Zeroes the singular value at rank `position`.
    pub fn remove_singular_value(&mut self, position: usize) -> Result<()> {
        self.check_unit(Unit::SingularValue(position))?;
        self.approx -= self.svd.component(position);
        // truncation leaves zero columns at zero; drop the rounding residue
        for &ch in &self.pruned {
            zero_channel(&mut self.approx, self.shape, ch);
        }
        self.svd = self.svd.without(position);
        self.removed_sv += 1;
        Ok(())
    }

    pub fn remove(&mut self, unit: Unit) -> Result<()> {
        match unit {
            Unit::Channel(i) => self.prune_channel(i),
            Unit::SingularValue(p) => self.remove_singular_value(p),
        }
    }

    /// Copy of the state with `unit` removed.
    pub fn with_removed(&self, unit: Unit) -> Result<Self> {
        let mut next = self.clone();
        next.remove(unit)?;
        Ok(next)
    }
}

pub(crate) fn zero_channel(m: &mut DMatrix<f64>, shape: ConvShape, channel: usize) {
    let area = shape.kernel_area();
    m.columns_mut(channel * area, area).fill(0.0);
}
