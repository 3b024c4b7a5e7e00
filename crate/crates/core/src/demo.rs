//! Seeded synthetic networks for demos and tests.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::io::{LayerRecord, LayerTensors, NetworkBundle};
use crate::tensor::{ConvShape, WeightTensor};

/// Tensor of i.i.d. standard normal values.
pub fn gaussian_tensor<R: Rng + ?Sized>(shape: ConvShape, rng: &mut R) -> WeightTensor {
    let data = (0..shape.len())
        .map(|_| StandardNormal.sample(rng))
        .collect();
    WeightTensor::new(shape, data).expect("finite samples")
}

/// Gaussian tensor from a fixed seed.
pub fn seeded_tensor(shape: ConvShape, seed: u64) -> WeightTensor {
    gaussian_tensor(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// A weight with a decaying spectrum and uneven channel energies, closer to a
/// trained layer than pure noise.
pub fn structured_weight<R: Rng + ?Sized>(shape: ConvShape, rng: &mut R) -> WeightTensor {
    let rank = shape.full_rank();
    let cols = shape.cols();
    let mut data = vec![0.0; shape.len()];
    for j in 0..rank {
        let strength = (-(j as f64) / (0.25 * rank as f64).max(1.0)).exp();
        let u: Vec<f64> = (0..shape.n).map(|_| StandardNormal.sample(rng)).collect();
        let v: Vec<f64> = (0..cols).map(|_| StandardNormal.sample(rng)).collect();
        for (f, uf) in u.iter().enumerate() {
            for (col, vc) in v.iter().enumerate() {
                data[f * cols + col] += strength * uf * vc;
            }
        }
    }
    let area = shape.kernel_area();
    for ch in 0..shape.c {
        let scale: f64 = 0.2 + rng.random::<f64>();
        for f in 0..shape.n {
            for e in 0..area {
                let idx = f * cols + ch * area + e;
                let noise: f64 = StandardNormal.sample(rng);
                data[idx] = scale * (data[idx] + 0.05 * noise);
            }
        }
    }
    let norm = (data.iter().map(|v| v * v).sum::<f64>() / data.len() as f64).sqrt();
    let fan_in = (cols as f64).sqrt();
    for v in &mut data {
        *v /= norm * fan_in;
    }
    WeightTensor::new(shape, data).expect("finite values")
}

/// Rounds every value to `f32`, the precision of stored blobs.
pub fn f32_rounded(t: &WeightTensor) -> WeightTensor {
    let data = t.data().iter().map(|&v| v as f32 as f64).collect();
    WeightTensor::new(t.shape(), data).expect("finite values")
}

/// A 4-layer network: a small stem that is left alone, then three
/// compressible 3x3 convolutions.
pub fn demo_network(seed: u64) -> NetworkBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs: [(&str, usize, usize, usize, usize, usize, bool); 4] = [
        ("conv1", 16, 3, 3, 1, 30, false),
        ("conv2", 32, 16, 3, 2, 14, true),
        ("conv3", 32, 32, 3, 1, 12, true),
        ("conv4", 64, 32, 3, 2, 5, true),
    ];
    let mut layers = Vec::new();
    let mut tensors = BTreeMap::new();
    for (name, n, c, k, stride, out, compressible) in specs {
        let shape = ConvShape { n, c, k };
        let mut rec = LayerRecord::synthetic(name, shape, stride, out, out);
        rec.compressible = compressible;
        let weight = f32_rounded(&structured_weight(shape, &mut rng));
        let noise = gaussian_tensor(shape, &mut rng);
        let grad: Vec<f64> = noise
            .data()
            .iter()
            .zip(weight.data())
            .map(|(z, w)| 0.01 * z + 0.02 * w)
            .collect();
        let gradient = f32_rounded(&WeightTensor::new(shape, grad).expect("finite values"));
        tensors.insert(name.to_string(), LayerTensors { weight, gradient });
        layers.push(rec);
    }
    let metadata = BTreeMap::from([
        ("generator".to_string(), "demo-gen".to_string()),
        ("seed".to_string(), seed.to_string()),
    ]);
    NetworkBundle {
        layers,
        tensors,
        metadata,
    }
}
