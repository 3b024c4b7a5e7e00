//! Independent reference implementations used as test oracles. Nothing here
//! calls into the approximation state or scoring code under test.

#![allow(dead_code)]

use cocompress::{ConvShape, FeatureMap, Unit, WeightTensor};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    (0..len)
        .map(|_| {
            // Box-Muller keeps the oracle free of the crate's sampling code
            let u1: f64 = rng.random::<f64>().max(1e-300);
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect()
}

pub fn random_tensor(rng: &mut impl Rng, shape: ConvShape) -> WeightTensor {
    WeightTensor::new(shape, gaussian(rng, shape.len())).unwrap()
}

pub fn random_shape(rng: &mut impl Rng, max_nc: usize, max_k: usize) -> ConvShape {
    ConvShape::new(
        rng.random_range(1..=max_nc),
        rng.random_range(1..=max_nc),
        rng.random_range(1..=max_k),
    )
    .unwrap()
}

/// `n x (c k k)` matrix built by explicit index arithmetic.
pub fn matrix(t: &WeightTensor) -> DMatrix<f64> {
    let s = t.shape();
    let area = s.k * s.k;
    DMatrix::from_fn(s.n, s.c * area, |f, col| {
        let (ch, e) = (col / area, col % area);
        t.get(f, ch, e / s.k, e % s.k)
    })
}

/// `sum((g * (a - w))^2)` by an explicit double loop.
pub fn loss(w: &DMatrix<f64>, g: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    let mut total = 0.0;
    for i in 0..w.nrows() {
        for j in 0..w.ncols() {
            let d = g[(i, j)] * (a[(i, j)] - w[(i, j)]);
            total += d * d;
        }
    }
    total
}

pub fn zero_channel(m: &mut DMatrix<f64>, k: usize, ch: usize) {
    let area = k * k;
    for col in ch * area..(ch + 1) * area {
        for row in 0..m.nrows() {
            m[(row, col)] = 0.0;
        }
    }
}

/// Singular triplets of `m`, largest first, by one-sided Jacobi rotations.
pub fn sorted_svd(m: &DMatrix<f64>) -> Vec<(f64, Vec<f64>, Vec<f64>)> {
    let wide = m.nrows() < m.ncols();
    let a = if wide { m.transpose() } else { m.clone() };
    let (rows, p) = a.shape();
    let mut b: Vec<Vec<f64>> = (0..p)
        .map(|j| a.column(j).iter().copied().collect())
        .collect();
    let mut v: Vec<Vec<f64>> = (0..p)
        .map(|j| (0..p).map(|i| f64::from(u8::from(i == j))).collect())
        .collect();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    for _ in 0..100 {
        let mut rotated = false;
        for i in 0..p {
            for j in i + 1..p {
                let (alpha, beta, gamma) =
                    (dot(&b[i], &b[i]), dot(&b[j], &b[j]), dot(&b[i], &b[j]));
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for cols in [&mut b, &mut v] {
                    for r in 0..cols[i].len() {
                        let (x, y) = (cols[i][r], cols[j][r]);
                        cols[i][r] = c * x - s * y;
                        cols[j][r] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut triplets: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..p)
        .map(|j| {
            let sigma = dot(&b[j], &b[j]).sqrt();
            let left: Vec<f64> = if sigma > 0.0 {
                b[j].iter().map(|x| x / sigma).collect()
            } else {
                vec![0.0; rows]
            };
            if wide {
                (sigma, v[j].clone(), left)
            } else {
                (sigma, left, v[j].clone())
            }
        })
        .collect();
    triplets.sort_by(|a, b| b.0.total_cmp(&a.0));
    triplets
}

/// Removes the `position`-th largest singular component of `m`.
pub fn drop_component(m: &DMatrix<f64>, position: usize) -> DMatrix<f64> {
    let (s, u, v) = &sorted_svd(m)[position];
    let mut out = m.clone();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out[(i, j)] -= s * u[i] * v[j];
        }
    }
    out
}

/// Approximation state rebuilt from scratch: the matrix plus which
/// channels are gone and how many singular slots remain.
#[derive(Clone, Debug)]
pub struct Replica {
    pub k: usize,
    pub m: DMatrix<f64>,
    pub pruned: Vec<usize>,
    pub channels: usize,
    pub retained: usize,
}

impl Replica {
    pub fn new(w: &WeightTensor) -> Self {
        let s = w.shape();
        Self {
            k: s.k,
            m: matrix(w),
            pruned: Vec::new(),
            channels: s.c,
            retained: s.n.min(s.c * s.k * s.k),
        }
    }

    pub fn apply(&mut self, unit: Unit) {
        match unit {
            Unit::Channel(ch) => {
                assert!(!self.pruned.contains(&ch));
                zero_channel(&mut self.m, self.k, ch);
                self.pruned.push(ch);
            }
            Unit::SingularValue(p) => {
                assert!(p < self.retained);
                self.m = drop_component(&self.m, p);
                for &ch in &self.pruned {
                    zero_channel(&mut self.m, self.k, ch);
                }
                self.retained -= 1;
            }
        }
    }

    pub fn applied(&self, unit: Unit) -> Self {
        let mut next = self.clone();
        next.apply(unit);
        next
    }

    pub fn units(&self) -> Vec<Unit> {
        let mut out: Vec<Unit> = (0..self.channels)
            .filter(|c| !self.pruned.contains(c))
            .map(Unit::Channel)
            .collect();
        out.extend((0..self.retained).map(Unit::SingularValue));
        out
    }
}

/// Own loss plus `gamma` times the mean loss of every follow-up removal.
pub fn importance(
    state: &Replica,
    w: &DMatrix<f64>,
    g: &DMatrix<f64>,
    unit: Unit,
    gamma: f64,
) -> f64 {
    let next = state.applied(unit);
    let own = loss(w, g, &next.m);
    let rest = next.units();
    let follow: f64 = rest.iter().map(|&u| loss(w, g, &next.applied(u).m)).sum();
    own + gamma * follow / rest.len() as f64
}

/// Valid-padding convolution by four nested loops.
pub fn direct_conv(w: &WeightTensor, x: &FeatureMap, stride: usize) -> FeatureMap {
    let s = w.shape();
    let h = (x.height - s.k) / stride + 1;
    let wd = (x.width - s.k) / stride + 1;
    let mut out = vec![0.0; s.n * h * wd];
    for f in 0..s.n {
        for oy in 0..h {
            for ox in 0..wd {
                let mut acc = 0.0;
                for ch in 0..s.c {
                    for ky in 0..s.k {
                        for kx in 0..s.k {
                            acc += w.get(f, ch, ky, kx)
                                * x.get(ch, oy * stride + ky, ox * stride + kx);
                        }
                    }
                }
                out[(f * h + oy) * wd + ox] = acc;
            }
        }
    }
    FeatureMap::new(s.n, h, wd, out).unwrap()
}

/// Root of `sum F_i ln(x / (a_i b_i)) / b_i = target` by bisection on `ln x`.
pub fn bisect_i_bar(models: &[(f64, f64)], flops: &[f64], target: f64) -> f64 {
    let residual = |log_x: f64| -> f64 {
        models
            .iter()
            .zip(flops)
            .map(|(&(a, b), &f)| f * (log_x - (a * b).ln()) / b)
            .sum::<f64>()
            - target
    };
    let (mut lo, mut hi) = (-700.0f64, 700.0f64);
    assert!(residual(lo) < 0.0 && residual(hi) > 0.0);
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if residual(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}
