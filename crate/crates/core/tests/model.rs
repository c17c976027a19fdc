mod common;

use common::{problem, random_connected_graph, small_problem, with_variant};
use cvae_core::graph::{mas_edge_weights, Graph};
use cvae_core::model::{
    elbo_cvae_corr_acyclic, elbo_cvae_corr_general, elbo_cvae_ind_acyclic, elbo_vae, evaluate_plan,
    full_plan, loss_cvae_corr_ns, train, Batch, CvaeModel, Likelihood, ModelShape, TrainConfig,
    Variant,
};
use cvae_core::nn::{grad_check, Activation, Mlp};
use cvae_core::numerics::Matrix;
use cvae_core::rng::substream;

const TOL: f64 = 1e-10;

fn tree6() -> Graph {
    Graph::new(6, [(0, 1), (0, 2), (2, 3), (2, 4), (4, 5)]).unwrap()
}

fn cyclic6() -> Graph {
    Graph::new(6, [(0, 1), (1, 2), (0, 2), (2, 3), (3, 4), (4, 5), (3, 5), (1, 4)]).unwrap()
}

fn zero_pair_net(model: &CvaeModel) -> CvaeModel {
    let mut m = model.clone();
    let p = m.pair_net.as_ref().unwrap();
    m.pair_net = Some(Mlp::zeros(p.in_dim(), p.hidden_dim(), p.out_dim(), p.activation()));
    m
}

#[test]
fn edgeless_graph_reduces_to_plain_elbo() {
    let (model, data, noise) = small_problem(Variant::CvaeCorr, 1);
    let g = Graph::empty(6);
    let w = mas_edge_weights(&g).unwrap();
    let base = elbo_vae(&model, &data, &noise).unwrap();
    let ind = with_variant(&model, Variant::CvaeInd);
    for v in [
        elbo_cvae_ind_acyclic(&ind, &data, &g, &noise).unwrap(),
        elbo_cvae_corr_acyclic(&model, &data, &g, &noise).unwrap(),
        elbo_cvae_corr_general(&model, &data, &g, &w, &noise).unwrap(),
        elbo_cvae_corr_general(&ind, &data, &g, &w, &noise).unwrap(),
        loss_cvae_corr_ns(&model, &data, &g, &w, 0.0, &noise).unwrap(),
    ] {
        assert!((v - base).abs() < TOL, "{v} vs {base}");
    }
}

#[test]
fn weighted_objective_on_trees_matches_acyclic_forms() {
    let (model, data, noise) = small_problem(Variant::CvaeCorr, 2);
    let g = tree6();
    let w = mas_edge_weights(&g).unwrap();
    let general = elbo_cvae_corr_general(&model, &data, &g, &w, &noise).unwrap();
    let acyclic = elbo_cvae_corr_acyclic(&model, &data, &g, &noise).unwrap();
    assert!((general - acyclic).abs() < TOL);
    let ind = with_variant(&model, Variant::CvaeInd);
    let general = elbo_cvae_corr_general(&ind, &data, &g, &w, &noise).unwrap();
    let acyclic = elbo_cvae_ind_acyclic(&ind, &data, &g, &noise).unwrap();
    assert!((general - acyclic).abs() < TOL);
}

#[test]
fn zero_correlation_matches_factorized_objective() {
    let (model, data, noise) = small_problem(Variant::CvaeCorr, 3);
    let model = zero_pair_net(&model);
    let ind = with_variant(&model, Variant::CvaeInd);
    for g in [tree6(), cyclic6()] {
        let w = mas_edge_weights(&g).unwrap();
        let corr = elbo_cvae_corr_general(&model, &data, &g, &w, &noise).unwrap();
        let fact = elbo_cvae_corr_general(&ind, &data, &g, &w, &noise).unwrap();
        assert!((corr - fact).abs() < TOL, "{corr} vs {fact}");
    }
}

#[test]
fn zero_gamma_drops_negative_terms() {
    let (model, data, noise) = small_problem(Variant::CvaeCorr, 4);
    let g = cyclic6();
    let w = mas_edge_weights(&g).unwrap();
    let a = loss_cvae_corr_ns(&model, &data, &g, &w, 0.0, &noise).unwrap();
    let b = elbo_cvae_corr_general(&model, &data, &g, &w, &noise).unwrap();
    assert!((a - b).abs() < TOL);
    let c = loss_cvae_corr_ns(&model, &data, &g, &w, 0.5, &noise).unwrap();
    assert!(c < b, "regularizer is non-negative");
}

fn check_gradient(
    model: &CvaeModel,
    data: &Matrix,
    g: &Graph,
    gamma: f64,
    noise: &Matrix,
    value: impl Fn(&CvaeModel) -> f64,
) {
    let w = mas_edge_weights(g).unwrap();
    let plan = full_plan(model, g, &w, gamma, noise).unwrap();
    let (ev, grads) = evaluate_plan(model, data, &plan, true).unwrap();
    assert!((ev.objective - value(model)).abs() < 1e-9);
    let analytic = grads.unwrap().flat();
    let report = grad_check(
        |p| {
            let mut m = model.clone();
            m.set_flat_params(p).unwrap();
            value(&m)
        },
        &model.flat_params(),
        &analytic,
        &model.param_blocks(),
        1e-5,
        1e-4,
    );
    assert!(report.passed, "{report:?}");
}

#[test]
fn gradients_match_finite_differences() {
    let (model, data, noise) = small_problem(Variant::CvaeCorr, 5);
    let vae = with_variant(&model, Variant::Vae);
    check_gradient(&vae, &data, &tree6(), 0.0, &noise, |m| elbo_vae(m, &data, &noise).unwrap());

    let ind = with_variant(&model, Variant::CvaeInd);
    check_gradient(&ind, &data, &tree6(), 0.0, &noise, |m| {
        elbo_cvae_ind_acyclic(m, &data, &tree6(), &noise).unwrap()
    });

    // correlated family on a tree, γ = 0 leaves only positive terms
    check_gradient(&model, &data, &tree6(), 0.0, &noise, |m| {
        elbo_cvae_corr_acyclic(m, &data, &tree6(), &noise).unwrap()
    });

    let g = cyclic6();
    let w = mas_edge_weights(&g).unwrap();
    check_gradient(&model, &data, &g, 0.0, &noise, |m| {
        elbo_cvae_corr_general(m, &data, &g, &w, &noise).unwrap()
    });
    check_gradient(&model, &data, &g, 0.7, &noise, |m| {
        loss_cvae_corr_ns(m, &data, &g, &w, 0.7, &noise).unwrap()
    });
}

#[test]
fn multinomial_gradients_match_finite_differences() {
    let shape =
        ModelShape { data_dim: 5, latent_dim: 2, hidden_dim: 4, tau: 0.8, activation: Activation::Relu };
    let model = CvaeModel::new(Variant::CvaeInd, Likelihood::Multinomial, shape, 11).unwrap();
    let data = Matrix::from_fn(4, 5, |i, j| ((i * 3 + j * 7) % 4) as f64);
    let noise = Matrix::from_fn(4, 2, |i, j| 0.3 * i as f64 - 0.5 * j as f64);
    let g = Graph::path(4);
    check_gradient(&model, &data, &g, 0.0, &noise, |m| {
        elbo_cvae_ind_acyclic(m, &data, &g, &noise).unwrap()
    });
}

#[test]
fn minibatch_estimate_is_unbiased() {
    let (model, data, noise) = problem(Variant::CvaeCorr, 8, 6);
    let g = random_connected_graph(8, 0.4, 6);
    let w = mas_edge_weights(&g).unwrap();
    let gamma = 0.5;
    let full = evaluate_plan(&model, &data, &full_plan(&model, &g, &w, gamma, &noise).unwrap(), false)
        .unwrap()
        .0
        .objective;
    let mut rng = substream(6, "minibatch-test");
    let draws = 4000;
    let vals: Vec<f64> = (0..draws)
        .map(|_| {
            let b = Batch::sample(8, g.num_edges(), Variant::CvaeCorr, gamma, 3, 4, &mut rng);
            let eps = b.vertices.iter().map(|&v| noise.row(v).to_vec()).collect();
            let plan = b.plan(&model, &g, &w, gamma, eps);
            evaluate_plan(&model, &data, &plan, false).unwrap().0.objective
        })
        .collect();
    let mean = vals.iter().sum::<f64>() / draws as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
    let se = (var / draws as f64).sqrt();
    assert!((mean - full).abs() < 3.0 * se, "mean {mean} full {full} se {se}");
}

#[test]
fn training_improves_full_objective() {
    for variant in [Variant::Vae, Variant::CvaeInd, Variant::CvaeCorr] {
        let (model, data, _) = problem(variant, 12, 7);
        let g = random_connected_graph(12, 0.3, 7);
        let cfg = TrainConfig {
            epochs: 150,
            lr: 1e-2,
            b1_singleton: 4,
            b2_pairwise: 6,
            gamma: 0.1,
            seed: 7,
            ..TrainConfig::default()
        };
        let out = train(&model, &data, &g, &cfg).unwrap();
        assert!(
            out.final_eval.objective > out.initial.objective,
            "{variant:?}: {} -> {}",
            out.initial.objective,
            out.final_eval.objective
        );
        assert_eq!(out.trace.len(), 151);
    }
}

#[test]
fn training_is_bit_reproducible() {
    let (model, data, _) = problem(Variant::CvaeCorr, 10, 8);
    let g = random_connected_graph(10, 0.3, 8);
    let cfg = TrainConfig { epochs: 5, b1_singleton: 3, b2_pairwise: 5, seed: 8, ..Default::default() };
    let a = train(&model, &data, &g, &cfg).unwrap();
    let b = train(&model, &data, &g, &cfg).unwrap();
    assert_eq!(a.model.to_json(), b.model.to_json());
    let c = train(&model, &data, &g, &TrainConfig { seed: 9, ..cfg }).unwrap();
    assert_ne!(a.model.to_json(), c.model.to_json());
}
