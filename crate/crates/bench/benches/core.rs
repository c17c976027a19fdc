use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use cvae_core::datagen::{gen_tree_dataset, TreeGmmParams};
use cvae_core::graph::{mas_edge_weights, Graph};
use cvae_core::metrics::{distance_matrix, DistanceMode};
use cvae_core::model::{train, CvaeModel, Likelihood, ModelShape, TrainConfig, Variant};
use cvae_core::nn::Activation;
use cvae_core::numerics::{sym_eigendecomp, SymMatrix};

fn ring_with_chords(n: usize) -> Graph {
    let edges = (0..n).map(|i| (i, (i + 1) % n)).chain((0..n).step_by(3).map(|i| (i, (i + n / 2) % n)));
    let mut edges: Vec<_> = edges.map(|(a, b)| (a.min(b), a.max(b))).filter(|(a, b)| a != b).collect();
    edges.sort_unstable();
    edges.dedup();
    Graph::new(n, edges).unwrap()
}

fn edge_weights(c: &mut Criterion) {
    let mut group = c.benchmark_group("mas_edge_weights");
    group.sample_size(10);
    for n in [50, 100, 200] {
        let g = ring_with_chords(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &g, |b, g| {
            b.iter(|| mas_edge_weights(black_box(g)).unwrap())
        });
    }
    group.finish();
}

fn eigendecomposition(c: &mut Criterion) {
    let mut group = c.benchmark_group("sym_eigendecomp");
    group.sample_size(10);
    for n in [32, 128] {
        let a = SymMatrix::from_upper(n, |i, j| ((i * 7 + j * 13) % 17) as f64 / 17.0 - 0.5).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &a, |b, a| {
            b.iter(|| sym_eigendecomp(black_box(a)).unwrap())
        });
    }
    group.finish();
}

fn training(c: &mut Criterion) {
    let data = gen_tree_dataset(&TreeGmmParams { n: 128, data_dim: 50, latent_dim: 8, tau: 0.99, seed: 1 })
        .unwrap();
    let shape = ModelShape { data_dim: 50, latent_dim: 8, hidden_dim: 32, tau: 0.99, activation: Activation::Tanh };
    let config = TrainConfig { epochs: 1, b1_singleton: 32, b2_pairwise: 64, hidden_dim: 32, ..TrainConfig::default() };
    let mut group = c.benchmark_group("train_epoch");
    group.sample_size(10);
    for variant in [Variant::Vae, Variant::CvaeInd, Variant::CvaeCorr] {
        let model = CvaeModel::new(variant, Likelihood::Bernoulli, shape, 1).unwrap();
        group.bench_function(variant.as_str(), |b| {
            b.iter(|| train(&model, &data.x, &data.graph, &config).unwrap())
        });
    }
    group.finish();

    let model = CvaeModel::new(Variant::CvaeCorr, Likelihood::Bernoulli, shape, 1).unwrap();
    c.bench_function("distance_matrix_correlated_128", |b| {
        b.iter(|| distance_matrix(&model, black_box(&data.x), DistanceMode::Correlated).unwrap())
    });
}

criterion_group!(benches, edge_weights, eigendecomposition, training);
criterion_main!(benches);
