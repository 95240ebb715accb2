#![allow(dead_code)]

use groupsparse::network::{LayerSpec, LossKind, NetworkSpec};
use groupsparse::{Network, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Denominator floor so that near-zero gradients are compared absolutely.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_input(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn dense_spec(input: usize, hidden: &[usize], classes: usize, loss: LossKind) -> NetworkSpec {
    let mut layers = Vec::new();
    for &h in hidden {
        layers.push(LayerSpec::Dense { neurons: h });
        layers.push(LayerSpec::Relu);
    }
    layers.push(LayerSpec::Classifier { classes });
    NetworkSpec {
        input_shape: vec![input],
        layers,
        loss,
    }
}

pub fn decomposed_spec(stride: usize, padding: usize) -> NetworkSpec {
    NetworkSpec {
        input_shape: vec![2, 5, 5],
        layers: vec![
            LayerSpec::DecomposedPair { shared: 2, neurons: 3, kernel: 3, stride, padding },
            LayerSpec::Classifier { classes: 2 },
        ],
        loss: LossKind::CrossEntropy,
    }
}

fn conv_spec(rng: &mut ChaCha8Rng) -> NetworkSpec {
    let c = rng.random_range(1..=2);
    NetworkSpec {
        input_shape: vec![c, 6, 5],
        layers: vec![
            LayerSpec::Conv1dVertical { neurons: rng.random_range(2..=3), kernel: 3, stride: 1, padding: 1 },
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2, stride: 2 },
            LayerSpec::Conv1dHorizontal { neurons: rng.random_range(2..=3), kernel: 2, stride: 1, padding: 0 },
            LayerSpec::Relu,
            LayerSpec::Dense { neurons: rng.random_range(2..=4) },
            LayerSpec::Relu,
            LayerSpec::Classifier { classes: 3 },
        ],
        loss: LossKind::CrossEntropy,
    }
}

/// Seeded init with random nonzero biases.
pub fn init_with_biases(spec: NetworkSpec, rng: &mut ChaCha8Rng) -> Network {
    let mut net = Network::init(spec, rng.random()).unwrap();
    for (b, info) in net.layout().blocks.clone().iter().enumerate() {
        for n in 0..info.neurons {
            net.group_mut(b, n).bias = rng.random_range(-0.3..0.3);
        }
    }
    net
}

/// `count` small networks: dense with either loss, plain convolutions, and
/// decomposed pairs (the first entry is always a decomposed pair).
pub fn random_networks(seed: u64, count: usize) -> Vec<Network> {
    let mut rng = rng(seed);
    (0..count)
        .map(|i| {
            let spec = match i % 4 {
                0 => decomposed_spec(1 + (i / 4) % 2, (i / 4) % 2),
                1 => {
                    let hidden: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(2..=8)).collect();
                    dense_spec(rng.random_range(2..=6), &hidden, rng.random_range(2..=4), LossKind::CrossEntropy)
                }
                2 => dense_spec(rng.random_range(2..=6), &[rng.random_range(2..=8)], 2, LossKind::SquaredError),
                _ => conv_spec(&mut rng),
            };
            init_with_biases(spec, &mut rng)
        })
        .collect()
}

/// Largest per-coordinate relative error between backprop and central
/// differences, `|a - n| / max(|a|, |n|, FD_FLOOR)`.
pub fn gradient_check(net: &Network, x: &Tensor, label: usize) -> f64 {
    let (_, grad) = net.loss_and_grad(x, label).unwrap();
    let analytic = grad.to_flat();
    let base = net.params().to_flat();
    let mut probe = net.clone();
    let mut params = net.params().clone();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut shifted = base.clone();
        shifted[i] = base[i] + FD_STEP;
        params.set_flat(&shifted).unwrap();
        probe.set_params(params.clone()).unwrap();
        let up = probe.loss(x, label).unwrap();
        shifted[i] = base[i] - FD_STEP;
        params.set_flat(&shifted).unwrap();
        probe.set_params(params.clone()).unwrap();
        let down = probe.loss(x, label).unwrap();
        let numeric = (up - down) / (2.0 * FD_STEP);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
        worst = worst.max(rel);
    }
    worst
}

/// Zeroes each non-classifier group with probability `rate`, always sparing
/// one group per block.
pub fn zero_random_groups(net: &mut Network, rng: &mut ChaCha8Rng, rate: f64) -> usize {
    let mut zeroed = 0;
    for b in 0..net.classifier_block() {
        let n = net.layout().blocks[b].neurons;
        let keep = rng.random_range(0..n);
        for i in 0..n {
            if i != keep && rng.random_bool(rate) {
                net.group_mut(b, i).set_zero();
                zeroed += 1;
            }
        }
    }
    zeroed
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
