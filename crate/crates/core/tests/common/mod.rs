//! Random networks and data shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relprop::{Layer, Model, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn conv(rng: &mut ChaCha8Rng, in_c: usize, out_c: usize, k: usize, stride: usize, padding: usize) -> Layer {
    let w = uniform(rng, &[out_c, in_c, k, k], -1.0, 1.0);
    Layer::conv2d(w, Tensor::zeros(vec![out_c]).unwrap(), stride, padding).unwrap()
}

fn dense(rng: &mut ChaCha8Rng, n_in: usize, n_out: usize) -> Layer {
    let w = uniform(rng, &[n_in, n_out], -1.0, 1.0);
    Layer::dense(w, Tensor::zeros(vec![n_out]).unwrap()).unwrap()
}

/// A bias-free network of `2..=4` layers mixing Dense, Conv2d, ReLU and
/// SumPool2d, ending in a Dense layer with `classes` outputs.
pub fn random_model(rng: &mut ChaCha8Rng, classes: usize) -> Model {
    let n_layers = rng.random_range(2..=4);
    let c = rng.random_range(1..=2);
    let side = if rng.random_bool(0.5) { 6 } else { 8 };
    let input = vec![c, side, side];
    let mut shape = input.clone();
    let mut layers = Vec::new();
    for _ in 0..n_layers - 1 {
        let spatial = shape.len() == 3;
        let last_relu = matches!(layers.last(), Some(Layer::ReLU));
        let mut options = vec!["dense"];
        if !last_relu && !layers.is_empty() {
            options.push("relu");
        }
        if spatial {
            options.push("conv");
            if shape[1] % 2 == 0 && shape[1] >= 2 {
                options.push("pool");
            }
        }
        let layer = match options[rng.random_range(0..options.len())] {
            "conv" => {
                let out_c = rng.random_range(1..=3);
                if rng.random_bool(0.5) {
                    conv(rng, shape[0], out_c, 3, 1, 1)
                } else {
                    conv(rng, shape[0], out_c, 2, 1, 0)
                }
            }
            "pool" => Layer::sum_pool(2, 2).unwrap(),
            "relu" => Layer::ReLU,
            _ => {
                let n_in = shape.iter().product();
                let n_out = rng.random_range(4..=10);
                dense(rng, n_in, n_out)
            }
        };
        shape = layer.output_shape(&shape).unwrap();
        layers.push(layer);
    }
    let n_in = shape.iter().product();
    layers.push(dense(rng, n_in, classes));
    Model::new(input, layers).unwrap()
}

/// Index of the largest-magnitude score.
pub fn strongest(scores: &Tensor) -> usize {
    let d = scores.data();
    (0..d.len()).fold(0, |b, i| if d[i].abs() > d[b].abs() { i } else { b })
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
