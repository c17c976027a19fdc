//! Synthetic datasets: latent vectors drawn from a tree-structured Gaussian
//! graphical model, decoded to binary observations, plus the dual-user split
//! used for matching experiments.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::graph::Graph;
use crate::nn::{Activation, Mlp};
use crate::numerics::{first_principal_component, Matrix};
use crate::rng::{indexed_substream, standard_normals, substream};

pub const SYNTHETIC_HIDDEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub x: Matrix,
    pub z_true: Matrix,
    pub labels: Vec<u8>,
    pub graph: Graph,
    pub seed: u64,
}

/// Parameters of [`gen_tree_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TreeGmmParams {
    pub n: usize,
    pub data_dim: usize,
    pub latent_dim: usize,
    pub tau: f64,
    pub seed: u64,
}

impl Default for TreeGmmParams {
    fn default() -> Self {
        Self { n: 500, data_dim: 50, latent_dim: 8, tau: 0.99, seed: 0 }
    }
}

/// Uniform random recursive tree: vertex `t` attaches to a uniformly chosen
/// earlier vertex.
pub fn random_recursive_tree(n: usize, seed: u64) -> Graph {
    let mut rng = substream(seed, "tree");
    let edges: Vec<_> = (1..n).map(|t| (rng.random_range(0..t), t)).collect();
    Graph::new(n, edges).expect("recursive tree edges are valid")
}

/// Tree and latents with `z_root ~ N(0, I)` and
/// `z_child | z_parent ~ N(τ z_parent, (1 − τ²) I)`, so every vertex is
/// standard normal and every edge has correlation `τ`.
pub fn sample_tree_gmm(n: usize, d: usize, tau: f64, seed: u64) -> Result<(Graph, Matrix)> {
    if n < 2 {
        return invalid("tree model needs at least two vertices");
    }
    if !(tau > 0.0 && tau < 1.0) {
        return invalid(format!("tau must lie in (0, 1), got {tau}"));
    }
    if d == 0 {
        return invalid("latent dimension must be positive");
    }
    let tree = random_recursive_tree(n, seed);
    let mut parent = vec![usize::MAX; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = std::collections::VecDeque::from([0usize]);
    let mut seen = vec![false; n];
    seen[0] = true;
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &u in tree.neighbors(v) {
            if !seen[u] {
                seen[u] = true;
                parent[u] = v;
                queue.push_back(u);
            }
        }
    }
    let cond_sd = (1.0 - tau * tau).sqrt();
    let mut z = Matrix::zeros(n, d);
    for v in order {
        let eps = standard_normals(&mut indexed_substream(seed, "latent", v as u64), d);
        let row: Vec<f64> = if parent[v] == usize::MAX {
            eps
        } else {
            let p = z.row(parent[v]);
            p.iter().zip(&eps).map(|(pz, e)| tau * pz + cond_sd * e).collect()
        };
        z.row_mut(v).copy_from_slice(&row);
    }
    Ok((tree, z))
}

/// The fixed random two-layer tanh network used to generate observations.
pub fn synthetic_decoder(d: usize, data_dim: usize, seed: u64) -> Mlp {
    let mut rng = substream(seed, "synthetic-decoder");
    let mut net = Mlp::zeros(d, SYNTHETIC_HIDDEN, data_dim, Activation::Tanh);
    let [w1, b1, w2, b2] = net.blocks_mut();
    // large enough that small latent differences move the logits
    let s1 = 3.0 / (d as f64).sqrt();
    let s2 = 8.0 / (SYNTHETIC_HIDDEN as f64).sqrt();
    for (block, scale) in [(w1, s1), (b1, 0.5), (w2, s2), (b2, 0.5)] {
        let draws = standard_normals(&mut rng, block.len());
        block.iter_mut().zip(draws).for_each(|(w, e)| *w = scale * e);
    }
    net
}

/// Element-wise Bernoulli draws with logits `net(z_i)`; row `i` uses its own
/// substream so the result does not depend on evaluation order.
pub fn decode_with_net(z: &Matrix, net: &Mlp, seed: u64) -> Result<Matrix> {
    if z.cols() != net.in_dim() {
        return invalid("latent width does not match decoder input");
    }
    let mut x = Matrix::zeros(z.rows(), net.out_dim());
    for i in 0..z.rows() {
        let (logits, _) = net.forward(z.row(i))?;
        let mut rng = indexed_substream(seed, "bernoulli", i as u64);
        for (slot, l) in x.row_mut(i).iter_mut().zip(logits) {
            let p = 1.0 / (1.0 + (-l).exp());
            *slot = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
        }
    }
    Ok(x)
}

pub fn decode_to_bernoulli(z: &Matrix, data_dim: usize, seed: u64) -> Result<Matrix> {
    decode_with_net(z, &synthetic_decoder(z.cols(), data_dim, seed), seed)
}

/// Label 1 for the upper `⌈n/2⌉` scores in ascending rank order (ties broken
/// by index).
pub fn labels_from_scores(scores: &[f64]) -> Vec<u8> {
    let n = scores.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut labels = vec![0u8; n];
    for &i in &idx[n / 2..] {
        labels[i] = 1;
    }
    labels
}

/// Median split of the first principal component scores of `z`.
pub fn make_labels(z: &Matrix) -> Result<Vec<u8>> {
    if z.rows() < 2 {
        return invalid("labelling needs at least two points");
    }
    let pc = first_principal_component(z)?;
    Ok(labels_from_scores(&pc.scores))
}

/// `n` independent standard-normal latent rows.
pub fn sample_independent_latents(n: usize, d: usize, seed: u64) -> Matrix {
    let mut z = Matrix::zeros(n, d);
    for i in 0..n {
        let row = standard_normals(&mut indexed_substream(seed, "latent", i as u64), d);
        z.row_mut(i).copy_from_slice(&row);
    }
    z
}

pub fn gen_tree_dataset(p: &TreeGmmParams) -> Result<SyntheticDataset> {
    let (graph, z) = sample_tree_gmm(p.n, p.latent_dim, p.tau, p.seed)?;
    if p.data_dim == 0 {
        return invalid("data dimension must be positive");
    }
    let x = decode_to_bernoulli(&z, p.data_dim, p.seed)?;
    let labels = make_labels(&z)?;
    Ok(SyntheticDataset { x, z_true: z, labels, graph, seed: p.seed })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualUserDataset {
    pub x_a: Matrix,
    pub x_b: Matrix,
    /// Source row of each pair.
    pub rows: Vec<usize>,
    /// Source rows with fewer than two nonzeros.
    pub skipped: Vec<usize>,
}

impl DualUserDataset {
    pub fn m(&self) -> usize {
        self.rows.len()
    }

    /// `2m` rows: all A users, then all B users.
    pub fn stacked(&self) -> Matrix {
        let mut data = self.x_a.data().to_vec();
        data.extend_from_slice(self.x_b.data());
        Matrix::from_vec(2 * self.m(), self.x_a.cols(), data).expect("shapes agree")
    }

    /// Bipartite graph over [`Self::stacked`] linking each user to its dual.
    pub fn graph(&self) -> Graph {
        let m = self.m();
        Graph::new(2 * m, (0..m).map(|i| (i, m + i))).expect("matching edges are valid")
    }

    /// Index of each stacked user's dual.
    pub fn pairing(&self) -> Vec<usize> {
        let m = self.m();
        (0..2 * m).map(|i| if i < m { i + m } else { i - m }).collect()
    }

    /// Pairs restricted to `keep` (indices into `0..m`).
    pub fn subset(&self, keep: &[usize]) -> Result<Self> {
        let pick = |x: &Matrix| -> Result<Matrix> {
            let rows: Vec<Vec<f64>> = keep.iter().map(|&i| x.row(i).to_vec()).collect();
            if rows.is_empty() {
                return Ok(Matrix::zeros(0, x.cols()));
            }
            Matrix::from_rows(&rows)
        };
        if keep.iter().any(|&i| i >= self.m()) {
            return invalid("pair index out of range");
        }
        Ok(Self {
            x_a: pick(&self.x_a)?,
            x_b: pick(&self.x_b)?,
            rows: keep.iter().map(|&i| self.rows[i]).collect(),
            skipped: Vec::new(),
        })
    }
}

/// Splits the nonzero coordinates of each row uniformly at random into two
/// halves (A receives the extra one for odd counts).
pub fn split_dual_users(x: &Matrix, seed: u64) -> Result<DualUserDataset> {
    let mut a_rows = Vec::new();
    let mut b_rows = Vec::new();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for r in 0..x.rows() {
        let row = x.row(r);
        let mut support: Vec<usize> = (0..row.len()).filter(|&k| row[k] != 0.0).collect();
        if support.len() < 2 {
            skipped.push(r);
            continue;
        }
        support.shuffle(&mut indexed_substream(seed, "dual-split", r as u64));
        let half = support.len().div_ceil(2);
        let mut a = vec![0.0; row.len()];
        let mut b = vec![0.0; row.len()];
        for &k in &support[..half] {
            a[k] = row[k];
        }
        for &k in &support[half..] {
            b[k] = row[k];
        }
        a_rows.push(a);
        b_rows.push(b);
        rows.push(r);
    }
    let build = |rs: Vec<Vec<f64>>| {
        if rs.is_empty() {
            Ok(Matrix::zeros(0, x.cols()))
        } else {
            Matrix::from_rows(&rs)
        }
    };
    Ok(DualUserDataset { x_a: build(a_rows)?, x_b: build(b_rows)?, rows, skipped })
}

/// Binary rows decoded from independent latents, then split into dual users.
pub fn gen_dual_dataset(rows: usize, data_dim: usize, latent_dim: usize, seed: u64) -> Result<DualUserDataset> {
    if rows == 0 || data_dim == 0 || latent_dim == 0 {
        return invalid("dual dataset sizes must be positive");
    }
    let z = sample_independent_latents(rows, latent_dim, seed);
    let x = decode_to_bernoulli(&z, data_dim, seed)?;
    split_dual_users(&x, seed)
}

/// Tab-separated rows, integers written without a decimal point.
pub fn write_matrix_tsv(x: &Matrix) -> String {
    let mut s = String::new();
    for i in 0..x.rows() {
        let cells: Vec<String> = x.row(i).iter().map(|v| format!("{v}")).collect();
        s.push_str(&cells.join("\t"));
        s.push('\n');
    }
    s
}

pub fn parse_matrix_tsv(text: &str) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(['\t', ' ', ','])
            .filter(|c| !c.is_empty())
            .map(|c| {
                c.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse { line: k + 1, msg: format!("bad number {c:?}") })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    line: k + 1,
                    msg: format!("expected {} columns, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return invalid("matrix file has no rows");
    }
    Matrix::from_rows(&rows)
}

pub fn write_labels(labels: &[u8]) -> String {
    labels.iter().map(|l| format!("{l}\n")).collect()
}

pub fn parse_labels(text: &str) -> Result<Vec<u8>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| match l.trim() {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(Error::Parse { line: k + 1, msg: format!("label must be 0 or 1, got {other:?}") }),
        })
        .collect()
}
