#![allow(dead_code)]

use cvae_core::graph::Graph;
use cvae_core::model::{CvaeModel, Likelihood, ModelShape, Variant};
use cvae_core::nn::Activation;
use cvae_core::numerics::Matrix;
use cvae_core::rng::{standard_normals, substream};
use rand::Rng;

/// Random graph with each edge present independently with probability `p`.
pub fn random_graph(n: usize, p: f64, seed: u64) -> Graph {
    let mut rng = substream(seed, "random-graph");
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Graph::new(n, edges).unwrap()
}

pub fn random_connected_graph(n: usize, p: f64, seed: u64) -> Graph {
    (0..)
        .map(|k| random_graph(n, p, seed.wrapping_mul(1000).wrapping_add(k)))
        .find(|g| g.connected_components().len() == 1)
        .unwrap()
}

/// n = 6, D = 8, d = 3, hidden = 5 model with binary data and frozen noise.
pub fn small_problem(variant: Variant, seed: u64) -> (CvaeModel, Matrix, Matrix) {
    problem(variant, 6, seed)
}

/// Like [`small_problem`] with `n` data points.
pub fn problem(variant: Variant, n: usize, seed: u64) -> (CvaeModel, Matrix, Matrix) {
    let (dd, d) = (8, 3);
    let shape = ModelShape {
        data_dim: dd,
        latent_dim: d,
        hidden_dim: 5,
        tau: 0.9,
        activation: Activation::Tanh,
    };
    let mut model = CvaeModel::new(variant, Likelihood::Bernoulli, shape, seed).unwrap();
    let mut rng = substream(seed, "small-problem");
    // non-zero biases so every parameter influences the objective
    let mut flat = model.flat_params();
    for (name, range) in model.param_blocks() {
        if name.ends_with(".b1") || name.ends_with(".b2") {
            for k in range {
                flat[k] = 0.3 * standard_normals(&mut rng, 1)[0];
            }
        }
    }
    model.set_flat_params(&flat).unwrap();
    let data = Matrix::from_fn(n, dd, |_, _| if rng.random::<f64>() < 0.4 { 1.0 } else { 0.0 });
    let noise = Matrix::from_vec(n, d, standard_normals(&mut rng, n * d)).unwrap();
    (model, data, noise)
}

/// Same model with a different variant tag and, for `cvae_corr`, the given pair net.
pub fn with_variant(model: &CvaeModel, variant: Variant) -> CvaeModel {
    let mut m = model.clone();
    m.variant = variant;
    if variant != Variant::CvaeCorr {
        m.pair_net = None;
    }
    m
}
