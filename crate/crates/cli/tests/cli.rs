use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn cvae(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvae"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = cvae(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn digest(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    names
        .into_iter()
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            (name, Sha256::digest(fs::read(&p).unwrap()).to_vec())
        })
        .collect()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn small_tree_data(dir: &Path) {
    ok(
        &["generate", "tree-gmm", "--n", "24", "--data-dim", "10", "--latent-dim", "3", "--seed", "3", "--out", "data"],
        dir,
    );
}

#[test]
fn weights_of_complete_graph() {
    let tmp = TempDir::new().unwrap();
    let mut text = String::from("n 5\n");
    for i in 0..5 {
        for j in i + 1..5 {
            text.push_str(&format!("{i} {j}\n"));
        }
    }
    write(tmp.path(), "k5.txt", &text);
    ok(&["weights", "--graph", "k5.txt", "--out", "w"], tmp.path());
    let w = json(tmp.path().join("w/weights.json"));
    let edges = w["edges"].as_array().unwrap();
    assert_eq!(edges.len(), 10);
    for e in edges {
        assert!((e["w"].as_f64().unwrap() - 0.4).abs() < 1e-12);
    }
    assert_eq!(w["components"], 1);
    assert!(tmp.path().join("w/manifest.json").exists());
}

#[test]
fn weights_of_tree_are_one() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "tree.txt", "n 6\n0 1\n0 2\n2 3\n2 4\n4 5\n");
    ok(&["weights", "--graph", "tree.txt", "--out", "w"], tmp.path());
    let w = json(tmp.path().join("w/weights.json"));
    for e in w["edges"].as_array().unwrap() {
        assert_eq!(e["w"].as_f64().unwrap(), 1.0);
    }
    assert!((w["sum"].as_f64().unwrap() - 5.0).abs() < 1e-12);
}

#[test]
fn malformed_graph_exits_2_without_output() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "dup.txt", "n 3\n0 1\n1 2\n0 1\n");
    let out = cvae(&["weights", "--graph", "dup.txt", "--out", "w"], tmp.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"));
    assert!(!tmp.path().join("w").exists());

    write(tmp.path(), "junk.txt", "n 3\n0 x\n");
    assert_eq!(code(&cvae(&["weights", "--graph", "junk.txt", "--out", "w"], tmp.path())), 2);
}

#[test]
fn missing_input_file_exits_3() {
    let tmp = TempDir::new().unwrap();
    let out = cvae(&["weights", "--graph", "nope.txt", "--out", "w"], tmp.path());
    assert_eq!(code(&out), 3);
}

#[test]
fn generate_tree_gmm_is_balanced_and_reproducible() {
    let tmp = TempDir::new().unwrap();
    let args = |out: &'static str| {
        ["generate", "tree-gmm", "--n", "500", "--data-dim", "50", "--latent-dim", "8", "--seed", "7", "--out", out]
    };
    ok(&args("a"), tmp.path());
    ok(&args("b"), tmp.path());
    let a = digest(&tmp.path().join("a"));
    assert_eq!(a, digest(&tmp.path().join("b")));
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["data.tsv", "graph.txt", "labels.txt", "latents.tsv", "manifest.json"]);

    let labels = fs::read_to_string(tmp.path().join("a/labels.txt")).unwrap();
    let ones = labels.lines().filter(|l| *l == "1").count();
    assert_eq!(labels.lines().count(), 500);
    assert_eq!(ones, 250);
    let m = json(tmp.path().join("a/manifest.json"));
    assert_eq!(m["config"]["params"]["seed"], 7);

    ok(&["generate", "tree-gmm", "--n", "500", "--seed", "8", "--out", "c"], tmp.path());
    assert_ne!(
        fs::read(tmp.path().join("a/data.tsv")).unwrap(),
        fs::read(tmp.path().join("c/data.tsv")).unwrap()
    );
}

#[test]
fn dual_split_reports_skipped_rows() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "x.tsv", "1\t1\t0\t1\n0\t0\t1\t0\n1\t0\t1\t0\n0\t0\t0\t0\n");
    ok(&["generate", "dual-split", "--input", "x.tsv", "--seed", "1", "--out", "d"], tmp.path());
    let m = json(tmp.path().join("d/manifest.json"));
    assert_eq!(m["skipped_rows"], 2);
    assert_eq!(m["pairs"], 2);
    let pairing = fs::read_to_string(tmp.path().join("d/pairing.txt")).unwrap();
    assert_eq!(pairing, "2\n3\n0\n1\n");
    let data = fs::read_to_string(tmp.path().join("d/data.tsv")).unwrap();
    assert_eq!(data.lines().count(), 4);
}

#[test]
fn unwritable_output_exits_3() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "blocker", "not a directory");
    let out = cvae(&["generate", "tree-gmm", "--n", "10", "--out", "blocker/sub"], tmp.path());
    assert_eq!(code(&out), 3);
}

#[test]
fn bad_config_key_exits_2() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "cfg.toml", "n = 10\nbogus = 1\n");
    let out = cvae(&["generate", "tree-gmm", "--config", "cfg.toml", "--out", "g"], tmp.path());
    assert_eq!(code(&out), 2);
    assert!(!tmp.path().join("g").exists());
}

#[test]
fn flags_override_config_file() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "cfg.toml", "n = 30\nseed = 4\ndata_dim = 6\n");
    ok(&["generate", "tree-gmm", "--config", "cfg.toml", "--n", "12", "--out", "g"], tmp.path());
    let p = &json(tmp.path().join("g/manifest.json"))["config"]["params"];
    assert_eq!(p["n"], 12);
    assert_eq!(p["seed"], 4);
    assert_eq!(p["data_dim"], 6);
}

fn train_args<'a>(variant: &'a str, epochs: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "train", "--data", "data/data.tsv", "--graph", "data/graph.txt", "--variant", variant,
        "--latent-dim", "3", "--hidden-dim", "8", "--epochs", epochs, "--lr", "0.01", "--b1", "8",
        "--b2", "16", "--seed", "5", "--out", out,
    ]
}

#[test]
fn train_vae_improves_objective() {
    let tmp = TempDir::new().unwrap();
    small_tree_data(tmp.path());
    let out = ok(&train_args("vae", "60", "t"), tmp.path());
    let m = json(tmp.path().join("t/manifest.json"));
    let (init, fin) = (m["initial_objective"].as_f64().unwrap(), m["final_objective"].as_f64().unwrap());
    assert!(fin > init, "{init} -> {fin}");
    assert!(String::from_utf8_lossy(&out.stdout).contains("final objective"));
    let trace = fs::read_to_string(tmp.path().join("t/trace.csv")).unwrap();
    assert!(trace.starts_with("epoch,objective,recon,kl_singleton,kl_pair,neg_reg\n"));
    assert_eq!(trace.lines().count(), 62);
}

#[test]
fn train_with_zero_epochs_keeps_initialization() {
    let tmp = TempDir::new().unwrap();
    small_tree_data(tmp.path());
    ok(&train_args("cvae_corr", "0", "t0"), tmp.path());
    ok(&train_args("cvae_corr", "0", "t1"), tmp.path());
    ok(&train_args("cvae_corr", "2", "t2"), tmp.path());
    let read = |d: &str| fs::read(tmp.path().join(d).join("checkpoint.json")).unwrap();
    assert_eq!(read("t0"), read("t1"));
    assert_ne!(read("t0"), read("t2"));
    let m = json(tmp.path().join("t0/manifest.json"));
    assert_eq!(m["initial_objective"], m["final_objective"]);
}

#[test]
fn train_warns_when_gamma_exceeds_guard() {
    let tmp = TempDir::new().unwrap();
    small_tree_data(tmp.path());
    // guard is 4·24·23/23 = 96
    let mut args = train_args("cvae_corr", "1", "t");
    args.extend(["--gamma", "200"]);
    let out = ok(&args, tmp.path());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning: gamma 200 exceeds guard"));
    let m = json(tmp.path().join("t/manifest.json"));
    assert_eq!(m["warnings"].as_array().unwrap().len(), 1);
}

#[test]
fn train_rejects_mismatched_graph() {
    let tmp = TempDir::new().unwrap();
    small_tree_data(tmp.path());
    write(tmp.path(), "small.txt", "n 3\n0 1\n");
    let mut args = train_args("vae", "1", "t");
    args[4] = "small.txt";
    let out = cvae(&args, tmp.path());
    assert_eq!(code(&out), 2);
    assert!(!tmp.path().join("t").exists());
}

#[test]
fn eval_reports_and_oracle() {
    let tmp = TempDir::new().unwrap();
    small_tree_data(tmp.path());
    ok(&train_args("vae", "5", "vae"), tmp.path());
    ok(&train_args("cvae_ind", "5", "ind"), tmp.path());

    let eval = |ck: &str, out: &str| {
        ok(
            &["eval", "--checkpoint", ck, "--data", "data/data.tsv", "--task", "clustering", "--labels", "data/labels.txt", "--out", out],
            tmp.path(),
        );
        json(tmp.path().join(out).join("report.json"))
    };
    let a = eval("vae/checkpoint.json", "ea");
    let b = eval("ind/checkpoint.json", "eb");
    for r in [&a, &b] {
        let v = r["value"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v));
        assert_eq!(r["metric"], "nmi");
    }
    let mut ca = a["config"].clone();
    let mut cb = b["config"].clone();
    assert_ne!(ca["checkpoint"], cb["checkpoint"]);
    ca["checkpoint"] = Value::Null;
    cb["checkpoint"] = Value::Null;
    assert_eq!(ca, cb);
    let pred = fs::read_to_string(tmp.path().join("ea/predicted_labels.txt")).unwrap();
    assert_eq!(pred.lines().count(), 24);

    ok(
        &["eval", "--debug-oracle", "--data", "data/data.tsv", "--task", "clustering", "--labels", "data/labels.txt", "--out", "o"],
        tmp.path(),
    );
    assert_eq!(json(tmp.path().join("o/report.json"))["value"], 1.0);
}

#[test]
fn eval_oracle_matching_and_linkpred() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "x.tsv", &"1\t1\t0\t1\n".repeat(6));
    ok(&["generate", "dual-split", "--input", "x.tsv", "--out", "d"], tmp.path());
    ok(
        &["eval", "--debug-oracle", "--data", "d/data.tsv", "--task", "matching", "--pairing", "d/pairing.txt", "--out", "m"],
        tmp.path(),
    );
    let r = json(tmp.path().join("m/report.json"));
    assert_eq!(r["metric"], "rr");
    assert_eq!(r["value"], 1.0);

    ok(&["generate", "tree-gmm", "--n", "30", "--data-dim", "5", "--latent-dim", "2", "--out", "g"], tmp.path());
    ok(&["generate", "link-holdout", "--graph", "g/graph.txt", "--seed", "2", "--out", "h"], tmp.path());
    ok(
        &[
            "eval", "--debug-oracle", "--data", "g/data.tsv", "--task", "linkpred", "--train-graph",
            "h/train_graph.txt", "--test-edges", "h/test_edges.txt", "--out", "l",
        ],
        tmp.path(),
    );
    let r = json(tmp.path().join("l/report.json"));
    assert_eq!(r["metric"], "ncrr");
    assert!((r["value"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn eval_without_task_inputs_exits_2() {
    let tmp = TempDir::new().unwrap();
    small_tree_data(tmp.path());
    ok(&train_args("vae", "0", "t"), tmp.path());
    let base = ["eval", "--checkpoint", "t/checkpoint.json", "--data", "data/data.tsv", "--out", "e"];
    for extra in [
        vec!["--task", "matching"],
        vec!["--task", "clustering"],
        vec!["--task", "linkpred", "--train-graph", "data/graph.txt"],
        vec!["--task", "clustering", "--labels", "missing.txt"],
        vec!["--task", "matching", "--pairing", "missing.txt"],
        vec!["--task", "linkpred", "--train-graph", "data/graph.txt", "--test-edges", "missing.txt"],
        vec!["--task", "clustering", "--labels", "data/labels.txt", "--mode", "correlated"],
    ] {
        let args: Vec<&str> = base.iter().copied().chain(extra.iter().copied()).collect();
        let out = cvae(&args, tmp.path());
        assert_eq!(code(&out), 2, "{extra:?}");
        assert!(!tmp.path().join("e").exists());
    }
}

#[test]
fn pipeline_is_bit_reproducible() {
    let tmp = TempDir::new().unwrap();
    let run = |tag: &str| {
        let d = format!("{tag}/data");
        let t = format!("{tag}/train");
        let e = format!("{tag}/eval");
        ok(&["generate", "tree-gmm", "--n", "20", "--data-dim", "8", "--latent-dim", "2", "--seed", "11", "--out", &d], tmp.path());
        ok(
            &[
                "train", "--data", &format!("{d}/data.tsv"), "--graph", &format!("{d}/graph.txt"),
                "--variant", "cvae_corr", "--latent-dim", "2", "--hidden-dim", "6", "--epochs", "3",
                "--b1", "8", "--b2", "8", "--seed", "11", "--out", &t,
            ],
            tmp.path(),
        );
        ok(
            &[
                "eval", "--checkpoint", &format!("{t}/checkpoint.json"), "--data", &format!("{d}/data.tsv"),
                "--task", "clustering", "--labels", &format!("{d}/labels.txt"), "--out", &e,
            ],
            tmp.path(),
        );
    };
    run("a");
    run("b");
    assert_eq!(digest(&tmp.path().join("a/data")), digest(&tmp.path().join("b/data")));
    // the train manifest echoes input paths, which differ between the runs
    let artifacts = |tag: &str| -> Vec<_> {
        digest(&tmp.path().join(tag).join("train")).into_iter().filter(|(n, _)| n != "manifest.json").collect()
    };
    assert_eq!(artifacts("a"), artifacts("b"));
    let strip = |tag: &str| {
        let mut r = json(tmp.path().join(tag).join("eval/report.json"));
        r["config"] = Value::Null;
        r
    };
    assert_eq!(strip("a"), strip("b"));
}

#[test]
fn gradcheck_passes_for_every_variant() {
    let tmp = TempDir::new().unwrap();
    for v in ["vae", "cvae_ind", "cvae_corr"] {
        ok(&["gradcheck", "--variant", v, "--seed", "3", "--out", v], tmp.path());
        let r = json(tmp.path().join(v).join("gradcheck.json"));
        assert_eq!(r["passed"], true);
        assert!(r["max_rel_err"].as_f64().unwrap() < 1e-4);
    }
    let out = cvae(&["gradcheck", "--tol", "1e-14", "--out", "strict"], tmp.path());
    assert_eq!(code(&out), 4);
}
