#![allow(clippy::needless_range_loop)]

mod common;

use common::*;
use groupsparse::network::{decomposed_forward, LayerSpec, LossKind, NetworkSpec};
use groupsparse::regularization::prox_group;
use groupsparse::verify::{brute_force_prox, ProxInstance};
use groupsparse::{Network, NeuronGroup, Tensor};
use rand::Rng;

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn random_group(shape: Vec<usize>, rng: &mut rand_chacha::ChaCha8Rng) -> NeuronGroup {
    let t = random_input(&shape, rng);
    NeuronGroup::new(t, rng.random_range(-0.5..0.5)).unwrap()
}

/// Plain nested loops over the decomposed layer definition.
fn decomposed_oracle(
    v: &[NeuronGroup],
    h: &[NeuronGroup],
    input: &Tensor,
    stride: usize,
    padding: usize,
) -> Vec<Vec<Vec<f64>>> {
    let (c, ih, iw) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let d = v[0].weights().shape()[1];
    let at = |ch: usize, y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y as usize >= ih || x as usize >= iw {
            0.0
        } else {
            input.data()[(ch * ih + y as usize) * iw + x as usize]
        }
    };
    let oh = (ih + 2 * padding - d) / stride + 1;
    let mut mid = vec![vec![vec![0.0; iw]; oh]; v.len()];
    for (l, g) in v.iter().enumerate() {
        for y in 0..oh {
            for x in 0..iw {
                let mut acc = g.bias;
                for ch in 0..c {
                    for k in 0..d {
                        let yy = (y * stride + k) as isize - padding as isize;
                        acc += g.weights().data()[ch * d + k] * at(ch, yy, x as isize);
                    }
                }
                mid[l][y][x] = relu(acc);
            }
        }
    }
    let ow = (iw + 2 * padding - d) / stride + 1;
    let mut out = vec![vec![vec![0.0; ow]; oh]; h.len()];
    for (f, g) in h.iter().enumerate() {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = g.bias;
                for (l, plane) in mid.iter().enumerate() {
                    for k in 0..d {
                        let xx = (x * stride + k) as isize - padding as isize;
                        if xx >= 0 && (xx as usize) < iw {
                            acc += g.weights().data()[l * d + k] * plane[y][xx as usize];
                        }
                    }
                }
                out[f][y][x] = relu(acc);
            }
        }
    }
    out
}

#[test]
fn decomposed_layer_matches_scalar_loops() {
    let mut rng = rng(21);
    for (stride, padding) in [(1, 0), (1, 1), (2, 1)] {
        let v: Vec<_> = (0..3).map(|_| random_group(vec![2, 3], &mut rng)).collect();
        let h: Vec<_> = (0..2).map(|_| random_group(vec![3, 3], &mut rng)).collect();
        let x = random_input(&[2, 6, 6], &mut rng);
        let got = decomposed_forward(&v, &h, &x, stride, padding).unwrap();
        let want = decomposed_oracle(&v, &h, &x, stride, padding);
        let flat: Vec<f64> = want.iter().flatten().flatten().copied().collect();
        assert_eq!(got.shape(), &[2, want[0].len(), want[0][0].len()]);
        for (a, b) in got.data().iter().zip(&flat) {
            assert!((a - b).abs() <= 1e-12, "stride {stride} padding {padding}: {a} vs {b}");
        }
    }
}

#[test]
fn dense_network_matches_scalar_loops() {
    let mut rng = rng(4);
    let spec = dense_spec(5, &[4, 3], 2, LossKind::CrossEntropy);
    let net = init_with_biases(spec, &mut rng);
    for _ in 0..10 {
        let x = random_input(&[5], &mut rng);
        let mut a = x.data().to_vec();
        for b in 0..3 {
            let next: Vec<f64> = net.params().blocks[b]
                .iter()
                .map(|g| {
                    let z = g.bias + g.weights().data().iter().zip(&a).map(|(w, v)| w * v).sum::<f64>();
                    if b < 2 {
                        relu(z)
                    } else {
                        z
                    }
                })
                .collect();
            a = next;
        }
        let got = net.predict(&x).unwrap();
        for (u, v) in got.data().iter().zip(&a) {
            assert!((u - v).abs() <= 1e-12);
        }
    }
}

#[test]
fn backprop_matches_finite_differences() {
    let nets = random_networks(77, 8);
    let mut rng = rng(78);
    for net in &nets {
        let x = random_input(net.input_shape(), &mut rng);
        let label = rng.random_range(0..net.output_len());
        let err = gradient_check(net, &x, label);
        assert!(err <= FD_REL_TOL, "{:?}: {err}", net.spec().layers);
    }
}

#[test]
fn strided_conv_network_gradients() {
    let spec = NetworkSpec {
        input_shape: vec![1, 7, 7],
        layers: vec![
            LayerSpec::Conv1dHorizontal { neurons: 2, kernel: 3, stride: 2, padding: 1 },
            LayerSpec::Relu,
            LayerSpec::Conv1dVertical { neurons: 2, kernel: 2, stride: 2, padding: 0 },
            LayerSpec::Relu,
            LayerSpec::Classifier { classes: 3 },
        ],
        loss: LossKind::SquaredError,
    };
    let mut rng = rng(5);
    let net = init_with_biases(spec, &mut rng);
    let x = random_input(&[1, 7, 7], &mut rng);
    assert!(gradient_check(&net, &x, 1) <= FD_REL_TOL);
}

#[test]
fn closed_form_prox_matches_brute_force() {
    let mut rng = rng(12);
    for i in 0..200 {
        let p = rng.random_range(1..=6);
        let inst = ProxInstance {
            theta_hat: random_input(&[p], &mut rng).into_data(),
            t: rng.random_range(0.1..1.0),
            lambda: rng.random_range(0.0..1.5),
            alpha: [0.0, 0.25, 0.5, 1.0][i % 4],
        };
        let closed = prox_group(&inst.theta_hat, inst.t, inst.lambda, inst.alpha, p).unwrap();
        let oracle = brute_force_prox(&inst);
        for (a, b) in closed.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-8, "{inst:?}: {closed:?} vs {oracle:?}");
        }
    }
}

#[test]
fn classifier_only_network_is_affine() {
    let spec = NetworkSpec {
        input_shape: vec![3],
        layers: vec![LayerSpec::Classifier { classes: 2 }],
        loss: LossKind::CrossEntropy,
    };
    let mut rng = rng(6);
    let net: Network = init_with_biases(spec, &mut rng);
    let x = random_input(&[3], &mut rng);
    let y = net.predict(&x).unwrap();
    for (k, g) in net.params().blocks[0].iter().enumerate() {
        let z = g.bias + g.weights().data().iter().zip(x.data()).map(|(w, v)| w * v).sum::<f64>();
        assert!((y.data()[k] - z).abs() <= 1e-12);
    }
}
