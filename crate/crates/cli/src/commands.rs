use std::path::Path;

use anyhow::anyhow;
use serde_json::{json, Value};

use cvae_core::datagen::{self, TreeGmmParams};
use cvae_core::graph::{holdout_edges, mas_edge_weights, write_graph, Edge, Graph};
use cvae_core::metrics::{self, DistanceMatrix, DistanceMode, EvalReport};
use cvae_core::model::{
    elbo_cvae_corr_general, elbo_vae, evaluate_plan, full_plan, loss_cvae_corr_ns, train as fit,
    CvaeModel, Likelihood, ModelShape, TrainConfig, Variant,
};
use cvae_core::nn::{grad_check, Activation};
use cvae_core::numerics::Matrix;
use cvae_core::rng::{standard_normals, substream};

use crate::config::{pick, FileConfig};
use crate::failure::{numerical, validation, CliResult, Context};
use crate::files::{
    read_edges, read_graph, read_labels, read_matrix, read_pairing, read_text, Outputs,
};
use crate::{EvalArgs, GenerateArgs, GenerateKind, GradcheckArgs, Task, TrainArgs, WeightsArgs};

const DEFAULT_SEED: u64 = 0;

fn parse_with<T: std::str::FromStr<Err = cvae_core::Error>>(s: &str, what: &str) -> CliResult<T> {
    s.parse::<T>().context(format!("bad {what}"))
}

fn parse_activation(s: &str) -> CliResult<Activation> {
    match s {
        "tanh" => Ok(Activation::Tanh),
        "relu" => Ok(Activation::Relu),
        other => Err(validation(anyhow!("unknown activation {other}"))),
    }
}

fn parse_mode(s: &str) -> CliResult<DistanceMode> {
    match s {
        "independent" => Ok(DistanceMode::Independent),
        "correlated" => Ok(DistanceMode::Correlated),
        other => Err(validation(anyhow!("unknown distance mode {other}"))),
    }
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}

fn manifest(command: &str, config: Value, extra: Value, outputs: &Outputs) -> String {
    let mut m = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "outputs": outputs.names(),
    });
    if let (Some(m), Value::Object(extra)) = (m.as_object_mut(), extra) {
        m.extend(extra);
    }
    pretty(&m)
}

fn commit(mut outputs: Outputs, dir: &Path, command: &str, config: Value, extra: Value) -> CliResult<()> {
    let text = manifest(command, config, extra, &outputs);
    outputs.add("manifest.json", text);
    outputs.commit(dir)?;
    Ok(())
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

pub fn weights(args: WeightsArgs) -> CliResult<()> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let seed = pick(args.common.seed, file.seed, DEFAULT_SEED);
    let graph = read_graph(&args.graph)?;
    let weights = mas_edge_weights(&graph).context("computing edge weights")?;
    let mut out = Outputs::default();
    out.add("weights.json", format!("{}\n", weights.to_json()));
    println!(
        "{} edges, weight sum {:.6}, {} components",
        weights.edges().len(),
        weights.sum(),
        weights.components()
    );
    let config = json!({ "graph": path_str(&args.graph), "seed": seed });
    commit(out, &args.common.out, "weights", config, json!({}))
}

pub fn generate(args: GenerateArgs) -> CliResult<()> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let seed = pick(args.common.seed, file.seed, DEFAULT_SEED);
    let defaults = TreeGmmParams::default();
    let mut out = Outputs::default();
    let (config, extra) = match args.kind {
        GenerateKind::TreeGmm => {
            let p = TreeGmmParams {
                n: pick(args.n, file.n, defaults.n),
                data_dim: pick(args.data_dim, file.data_dim, defaults.data_dim),
                latent_dim: pick(args.latent_dim, file.latent_dim, defaults.latent_dim),
                tau: pick(args.tau, file.tau, defaults.tau),
                seed,
            };
            let ds = datagen::gen_tree_dataset(&p).context("generating tree-gmm data")?;
            out.add("data.tsv", datagen::write_matrix_tsv(&ds.x));
            out.add("graph.txt", write_graph(&ds.graph));
            out.add("labels.txt", datagen::write_labels(&ds.labels));
            out.add("latents.tsv", datagen::write_matrix_tsv(&ds.z_true));
            let ones = ds.labels.iter().filter(|&&l| l == 1).count();
            let extra = json!({ "label_counts": [ds.labels.len() - ones, ones] });
            (json!({ "kind": "tree-gmm", "params": p }), extra)
        }
        GenerateKind::DualSplit => {
            let (ds, source) = match &args.input {
                Some(path) => {
                    let x = read_matrix(path)?;
                    let ds = datagen::split_dual_users(&x, seed).context("splitting rows")?;
                    (ds, json!({ "input": path_str(path) }))
                }
                None => {
                    let rows = pick(args.rows, file.rows, 700);
                    let data_dim = pick(args.data_dim, file.data_dim, defaults.data_dim);
                    let latent_dim = pick(args.latent_dim, file.latent_dim, defaults.latent_dim);
                    let ds = datagen::gen_dual_dataset(rows, data_dim, latent_dim, seed)
                        .context("generating dual-user data")?;
                    (ds, json!({ "rows": rows, "data_dim": data_dim, "latent_dim": latent_dim }))
                }
            };
            if ds.m() == 0 {
                return Err(validation(anyhow!("no row has two or more nonzeros")));
            }
            for &r in &ds.skipped {
                eprintln!("warning: skipped row {r}: fewer than two nonzeros");
            }
            out.add("data.tsv", datagen::write_matrix_tsv(&ds.stacked()));
            out.add("graph.txt", write_graph(&ds.graph()));
            let pairing: String = ds.pairing().iter().map(|p| format!("{p}\n")).collect();
            out.add("pairing.txt", pairing);
            let source_rows: String = ds.rows.iter().map(|r| format!("{r}\n")).collect();
            out.add("source_rows.txt", source_rows);
            let extra = json!({
                "pairs": ds.m(),
                "skipped_rows": ds.skipped.len(),
                "skipped": ds.skipped,
            });
            (json!({ "kind": "dual-split", "seed": seed, "params": source }), extra)
        }
        GenerateKind::LinkHoldout => {
            let path = args
                .graph
                .as_ref()
                .ok_or_else(|| validation(anyhow!("link-holdout needs --graph")))?;
            let g = read_graph(path)?;
            let (train_edges, test_edges) = holdout_edges(&g, seed);
            let train_graph = Graph::new(g.n(), train_edges.iter().copied())
                .context("building training graph")?;
            out.add("train_graph.txt", write_graph(&train_graph));
            out.add("test_edges.txt", write_edge_list(&test_edges));
            let extra = json!({ "train_edges": train_edges.len(), "test_edges": test_edges.len() });
            (json!({ "kind": "link-holdout", "seed": seed, "graph": path_str(path) }), extra)
        }
    };
    commit(out, &args.common.out, "generate", config, extra)
}

fn write_edge_list(edges: &[Edge]) -> String {
    edges.iter().map(|(a, b)| format!("{a} {b}\n")).collect()
}

pub fn train(args: TrainArgs) -> CliResult<()> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let defaults = TrainConfig::default();
    let variant_name = args
        .variant
        .or(file.variant)
        .ok_or_else(|| validation(anyhow!("--variant is required")))?;
    let variant: Variant = parse_with(&variant_name, "variant")?;
    let likelihood: Likelihood =
        parse_with(&pick(args.likelihood, file.likelihood, "bernoulli".into()), "likelihood")?;
    let activation = parse_activation(&pick(args.activation, file.activation, "tanh".into()))?;
    let latent_dim = pick(args.latent_dim, file.latent_dim, 100);
    let tau = pick(args.tau, file.tau, 0.99);
    let config = TrainConfig {
        gamma: pick(args.gamma, file.gamma, defaults.gamma),
        lr: pick(args.lr, file.lr, defaults.lr),
        epochs: pick(args.epochs, file.epochs, defaults.epochs),
        b1_singleton: pick(args.b1, file.b1, defaults.b1_singleton),
        b2_pairwise: pick(args.b2, file.b2, defaults.b2_pairwise),
        seed: pick(args.common.seed, file.seed, DEFAULT_SEED),
        hidden_dim: pick(args.hidden_dim, file.hidden_dim, defaults.hidden_dim),
        gamma_guard_c: pick(args.gamma_guard_c, file.gamma_guard_c, defaults.gamma_guard_c),
    };
    if !(config.lr > 0.0 && config.lr.is_finite()) {
        return Err(validation(anyhow!("lr must be positive")));
    }

    let data = read_matrix(&args.data)?;
    let graph = read_graph(&args.graph)?;
    if graph.n() != data.rows() {
        return Err(validation(anyhow!(
            "graph has {} vertices but {} has {} rows",
            graph.n(),
            args.data.display(),
            data.rows()
        )));
    }
    let shape = ModelShape {
        data_dim: data.cols(),
        latent_dim,
        hidden_dim: config.hidden_dim,
        tau,
        activation,
    };
    let model = CvaeModel::new(variant, likelihood, shape, config.seed).context("building model")?;
    let outcome = fit(&model, &data, &graph, &config).context("training")?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }

    let mut out = Outputs::default();
    out.add("checkpoint.json", format!("{}\n", outcome.model.to_json()));
    out.add("trace.csv", cvae_core::model::trace_csv(&outcome.trace));
    println!("initial objective: {}", outcome.initial.objective);
    println!("final objective: {}", outcome.final_eval.objective);
    let echo = json!({
        "data": path_str(&args.data),
        "graph": path_str(&args.graph),
        "variant": variant.as_str(),
        "likelihood": likelihood,
        "activation": activation,
        "latent_dim": latent_dim,
        "tau": tau,
        "train": config,
    });
    let extra = json!({
        "initial_objective": outcome.initial.objective,
        "final_objective": outcome.final_eval.objective,
        "warnings": outcome.warnings,
    });
    commit(out, &args.common.out, "train", echo, extra)
}

/// Inputs a task needs besides the distance matrix.
enum Truth {
    Pairing(Vec<usize>),
    Labels(Vec<u8>),
    Links { train: Vec<Edge>, test: Vec<Edge> },
}

/// Ground-truth file for the task; an absent flag or file is invalid input.
fn required<'a>(p: &'a Option<std::path::PathBuf>, flag: &str, task: &str) -> CliResult<&'a Path> {
    let p = p.as_deref().ok_or_else(|| validation(anyhow!("{task} needs {flag}")))?;
    if !p.is_file() {
        return Err(validation(anyhow!("{flag} {}: no such file", p.display())));
    }
    Ok(p)
}

fn load_truth(args: &EvalArgs, n: usize) -> CliResult<Truth> {
    let truth = match args.task {
        Task::Matching => Truth::Pairing(read_pairing(required(&args.pairing, "--pairing", "matching")?)?),
        Task::Clustering => Truth::Labels(read_labels(required(&args.labels, "--labels", "clustering")?)?),
        Task::Linkpred => {
            let g = read_graph(required(&args.train_graph, "--train-graph", "linkpred")?)?;
            let test = read_edges(required(&args.test_edges, "--test-edges", "linkpred")?)?;
            if g.n() != n {
                return Err(validation(anyhow!("training graph has {} vertices, data has {n} rows", g.n())));
            }
            Truth::Links { train: g.edges().to_vec(), test }
        }
    };
    let len = match &truth {
        Truth::Pairing(p) => Some(p.len()),
        Truth::Labels(l) => Some(l.len()),
        Truth::Links { .. } => None,
    };
    if let Some(len) = len {
        if len != n {
            return Err(validation(anyhow!("ground truth has {len} entries, data has {n} rows")));
        }
    }
    Ok(truth)
}

/// Distances that make every task's ground truth trivially recoverable.
/// Held-out links get distinct small distances because ties count against
/// the rank.
fn oracle_distances(truth: &Truth, n: usize) -> CliResult<DistanceMatrix> {
    let close = |i: usize, j: usize| -> Option<f64> {
        match truth {
            Truth::Pairing(p) => (p[i] == j).then_some(0.0),
            Truth::Labels(l) => (l[i] == l[j]).then_some(0.0),
            Truth::Links { test, .. } => {
                let k = test.iter().position(|&(a, b)| (a.min(b), a.max(b)) == (i.min(j), i.max(j)))?;
                Some((k + 1) as f64 / (test.len() + 1) as f64)
            }
        }
    };
    let m = Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { close(i, j).unwrap_or(10.0) });
    DistanceMatrix::from_matrix(m).context("oracle distances")
}

pub fn eval(args: EvalArgs) -> CliResult<()> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let data = read_matrix(&args.data)?;
    let n = data.rows();
    let truth = load_truth(&args, n)?;
    let model = match &args.checkpoint {
        Some(p) => Some(CvaeModel::from_json(&read_text(p)?).context(format!("in {}", p.display()))?),
        None => None,
    };
    let mode = match args.mode.clone().or(file.mode) {
        Some(m) => parse_mode(&m)?,
        None => match &model {
            Some(m) if m.variant == Variant::CvaeCorr => DistanceMode::Correlated,
            _ => DistanceMode::Independent,
        },
    };
    if let Some(m) = &model {
        if mode == DistanceMode::Correlated && m.pair_net.is_none() {
            return Err(validation(anyhow!(
                "correlated distances need a cvae_corr checkpoint, got {}",
                m.variant.as_str()
            )));
        }
        if m.data_dim() != data.cols() {
            return Err(validation(anyhow!(
                "checkpoint expects {} columns, data has {}",
                m.data_dim(),
                data.cols()
            )));
        }
    }

    let dis = match (&model, args.debug_oracle) {
        (_, true) => oracle_distances(&truth, n)?,
        (Some(m), false) => metrics::distance_matrix(m, &data, mode).context("computing distances")?,
        (None, false) => return Err(validation(anyhow!("--checkpoint is required"))),
    };

    let mut out = Outputs::default();
    let (metric, value, per_item) = match &truth {
        Truth::Pairing(p) => {
            let r = metrics::matching_rr(&dis, p).context("matching")?;
            ("rr", r.value, r.per_item)
        }
        Truth::Labels(l) => {
            let pred = metrics::spectral_cluster(&dis).context("clustering")?;
            let v = metrics::nmi(l, &pred).context("clustering")?;
            out.add("predicted_labels.txt", datagen::write_labels(&pred));
            ("nmi", v, Vec::new())
        }
        Truth::Links { train, test } => {
            let r = metrics::ncrr(&dis, train, test).context("link prediction")?;
            let per: Vec<f64> = r.per_vertex.iter().map(|&(_, v)| v).collect();
            ("ncrr", r.value, per)
        }
    };
    let task = match args.task {
        Task::Matching => "matching",
        Task::Clustering => "clustering",
        Task::Linkpred => "linkpred",
    };
    let opt = |p: &Option<std::path::PathBuf>| p.as_deref().map(path_str);
    let echo = json!({
        "task": task,
        "mode": mode,
        "checkpoint": opt(&args.checkpoint),
        "data": path_str(&args.data),
        "pairing": opt(&args.pairing),
        "labels": opt(&args.labels),
        "train_graph": opt(&args.train_graph),
        "test_edges": opt(&args.test_edges),
        "debug_oracle": args.debug_oracle,
    });
    let report = EvalReport { metric: metric.to_string(), value, per_item, config: echo.clone() };
    println!("{metric}: {value}");
    out.add("report.json", format!("{}\n", report.to_json()));
    commit(out, &args.common.out, "eval", echo, json!({ "value": value }))
}

pub fn gradcheck(args: GradcheckArgs) -> CliResult<()> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let seed = pick(args.common.seed, file.seed, DEFAULT_SEED);
    let variant: Variant =
        parse_with(&pick(args.variant, file.variant, "cvae_corr".into()), "variant")?;
    let gamma = pick(args.gamma, file.gamma, 0.5);
    let tol = pick(args.tol, file.tol, 1e-4);
    if gamma < 0.0 {
        return Err(validation(anyhow!("gamma must be non-negative")));
    }

    // six vertices, two triangles joined by a bridge and a chord
    let (n, data_dim, latent_dim) = (6, 8, 3);
    let graph = Graph::new(n, [(0, 1), (1, 2), (0, 2), (2, 3), (3, 4), (4, 5), (3, 5), (1, 4)])
        .context("building graph")?;
    let weights = mas_edge_weights(&graph).context("computing edge weights")?;
    let shape = ModelShape { data_dim, latent_dim, hidden_dim: 5, tau: 0.9, activation: Activation::Tanh };
    let model = CvaeModel::new(variant, Likelihood::Bernoulli, shape, seed).context("building model")?;
    let mut rng = substream(seed, "gradcheck");
    let data = Matrix::from_fn(n, data_dim, |_, _| {
        if standard_normals(&mut rng, 1)[0] > 0.25 { 1.0 } else { 0.0 }
    });
    let noise = Matrix::from_vec(n, latent_dim, standard_normals(&mut rng, n * latent_dim))
        .context("building noise")?;
    let gamma = if variant == Variant::CvaeCorr { gamma } else { 0.0 };

    let value = |m: &CvaeModel| -> cvae_core::Result<f64> {
        match variant {
            Variant::Vae => elbo_vae(m, &data, &noise),
            Variant::CvaeInd => elbo_cvae_corr_general(m, &data, &graph, &weights, &noise),
            Variant::CvaeCorr => loss_cvae_corr_ns(m, &data, &graph, &weights, gamma, &noise),
        }
    };
    let plan = full_plan(&model, &graph, &weights, gamma, &noise).context("building objective")?;
    let (_, grads) = evaluate_plan(&model, &data, &plan, true).context("evaluating objective")?;
    let analytic = grads.expect("gradient requested").flat();
    let mut failure = None;
    let report = grad_check(
        |p| {
            let mut m = model.clone();
            let v = m.set_flat_params(p).and_then(|_| value(&m));
            v.unwrap_or_else(|e| {
                failure.get_or_insert(e.to_string());
                f64::NAN
            })
        },
        &model.flat_params(),
        &analytic,
        &model.param_blocks(),
        1e-5,
        tol,
    );
    if let Some(e) = failure {
        return Err(numerical(anyhow!("objective evaluation failed: {e}")));
    }
    for b in &report.blocks {
        println!("{:<16} {:.3e}", b.name, b.max_rel_err);
    }
    println!("max relative error {:.3e} (tol {tol:e}): {}", report.max_rel_err, if report.passed { "ok" } else { "FAILED" });

    let mut out = Outputs::default();
    out.add("gradcheck.json", pretty(&json!(report)));
    let echo = json!({ "variant": variant.as_str(), "gamma": gamma, "tol": tol, "seed": seed, "h": 1e-5 });
    commit(out, &args.common.out, "gradcheck", echo, json!({ "passed": report.passed }))?;
    if !report.passed {
        return Err(numerical(anyhow!(
            "gradient check failed: max relative error {:.3e} exceeds {tol:e}",
            report.max_rel_err
        )));
    }
    Ok(())
}
