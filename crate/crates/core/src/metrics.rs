//! Evaluation over latent expected squared distances: dual-user matching
//! reciprocal rank, spectral clustering scored by NMI, and normalized
//! cumulative reciprocal rank for held-out links.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::gaussian::expected_sq_distance;
use crate::graph::Edge;
use crate::model::CvaeModel;
use crate::numerics::{sym_eigendecomp, Matrix, SymMatrix};

/// Symmetric, zero-diagonal, non-negative `n × n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix(Matrix);

impl DistanceMatrix {
    pub fn from_matrix(m: Matrix) -> Result<Self> {
        let n = m.rows();
        if m.cols() != n {
            return invalid("distance matrix must be square");
        }
        for i in 0..n {
            if m.get(i, i) != 0.0 {
                return invalid(format!("distance diagonal entry {i} is not zero"));
            }
            for j in 0..n {
                let v = m.get(i, j);
                if !v.is_finite() || v < -1e-12 {
                    return invalid(format!("distance ({i},{j}) = {v} is invalid"));
                }
                if (v - m.get(j, i)).abs() > 1e-10 * (1.0 + v.abs()) {
                    return invalid(format!("distance matrix is not symmetric at ({i},{j})"));
                }
            }
        }
        Ok(Self(m))
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMode {
    Independent,
    Correlated,
}

/// `dis_ij = E‖z_i − z_j‖²` under the singleton densities (independent) or
/// the pairwise density with the network's correlations (correlated).
pub fn distance_matrix(model: &CvaeModel, data: &Matrix, mode: DistanceMode) -> Result<DistanceMatrix> {
    if mode == DistanceMode::Correlated && model.pair_net.is_none() {
        return invalid("correlated distances need a model with a pair network");
    }
    if data.cols() != model.data_dim() {
        return invalid("data width does not match the model");
    }
    let n = data.rows();
    let qs = (0..n).map(|i| model.encode(data.row(i))).collect::<Result<Vec<_>>>()?;
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = match mode {
                DistanceMode::Independent => expected_sq_distance(&qs[i], &qs[j], None),
                DistanceMode::Correlated => {
                    let rho = model.pair_rho(data.row(i), data.row(j))?;
                    expected_sq_distance(&qs[i], &qs[j], Some(&rho))
                }
            };
            // rounding can leave tiny negatives when densities coincide
            let v = v.max(0.0);
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    DistanceMatrix::from_matrix(m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricResult {
    pub value: f64,
    pub per_item: Vec<f64>,
}

/// Mean reciprocal rank of each item's dual among all other items by
/// ascending distance (ties broken by index).
pub fn matching_rr(dis: &DistanceMatrix, pairing: &[usize]) -> Result<MetricResult> {
    let n = dis.n();
    if n == 0 || pairing.is_empty() {
        return invalid("matching needs at least one pair");
    }
    if pairing.len() != n {
        return invalid("pairing length differs from distance matrix size");
    }
    for (i, &p) in pairing.iter().enumerate() {
        if p >= n || p == i || pairing[p] != i {
            return invalid(format!("pairing is not an involution at {i}"));
        }
    }
    let per_item: Vec<f64> = (0..n)
        .map(|i| {
            let dual = pairing[i];
            let target = dis.get(i, dual);
            let ahead = (0..n)
                .filter(|&k| k != i && k != dual)
                .filter(|&k| {
                    let v = dis.get(i, k);
                    v < target || (v == target && k < dual)
                })
                .count();
            1.0 / (ahead + 1) as f64
        })
        .collect();
    let value = per_item.iter().sum::<f64>() / n as f64;
    Ok(MetricResult { value, per_item })
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Eigenvector of the second smallest eigenvalue of
/// `I − D^{-1/2} S D^{-1/2}`, `S_ij = exp(−dis_ij / 2)`.
pub fn fiedler_vector(dis: &DistanceMatrix) -> Result<Vec<f64>> {
    let n = dis.n();
    if n < 4 {
        return invalid("spectral clustering needs at least four points");
    }
    let s = Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { (-dis.get(i, j) / 2.0).exp() });
    let mut inv_sqrt = Vec::with_capacity(n);
    for i in 0..n {
        let deg: f64 = s.row(i).iter().sum();
        if !(deg > 0.0 && deg.is_finite()) {
            return Err(Error::DegenerateSimilarity(i));
        }
        inv_sqrt.push(1.0 / deg.sqrt());
    }
    let lap = SymMatrix::from_upper(n, |i, j| {
        let v = -inv_sqrt[i] * s.get(i, j) * inv_sqrt[j];
        if i == j {
            1.0 + v
        } else {
            v
        }
    })?;
    let eig = sym_eigendecomp(&lap)?;
    Ok(eig.vector(1))
}

/// Two clusters: coordinates of the Fiedler vector strictly above its median.
pub fn spectral_cluster(dis: &DistanceMatrix) -> Result<Vec<u8>> {
    let v = fiedler_vector(dis)?;
    let med = median(&v);
    Ok(v.iter().map(|&x| u8::from(x > med)).collect())
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `I(A;B) / sqrt(H(A) H(B))` with natural logarithms; zero if either side
/// has a single class.
pub fn nmi<T: Ord + Copy>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return invalid("labelings differ in length");
    }
    if a.is_empty() {
        return invalid("labelings are empty");
    }
    let n = a.len() as f64;
    let mut ca = BTreeMap::new();
    let mut cb = BTreeMap::new();
    let mut joint = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *ca.entry(x).or_insert(0usize) += 1;
        *cb.entry(y).or_insert(0usize) += 1;
        *joint.entry((x, y)).or_insert(0usize) += 1;
    }
    let ha = entropy(ca.values().copied(), n);
    let hb = entropy(cb.values().copied(), n);
    if ca.len() < 2 || cb.len() < 2 {
        return Ok(0.0);
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(x, y), &c)| {
            let pxy = c as f64 / n;
            pxy * (pxy * n * n / (ca[&x] as f64 * cb[&y] as f64)).ln()
        })
        .sum();
    Ok((mi / (ha * hb).sqrt()).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NcrrResult {
    pub value: f64,
    /// `(vertex, normalized CRR)` for every scored vertex.
    pub per_vertex: Vec<(usize, f64)>,
    /// Vertices with test edges but no candidates.
    pub excluded: Vec<usize>,
}

/// Normalized cumulative reciprocal rank of held-out links. For vertex `i`,
/// each test neighbour `j` contributes `1 / |{k ∉ N_train(i) ∪ {i} :
/// dis_ik ≤ dis_ij}|`; the sum is divided by its ideal value `Σ_{r ≤ t_i} 1/r`.
pub fn ncrr(dis: &DistanceMatrix, train: &[Edge], test: &[Edge]) -> Result<NcrrResult> {
    let n = dis.n();
    let norm = |&(a, b): &Edge| -> Result<Edge> {
        if a >= n || b >= n || a == b {
            return invalid(format!("edge ({a},{b}) is invalid for {n} vertices"));
        }
        Ok((a.min(b), a.max(b)))
    };
    let train: BTreeSet<Edge> = train.iter().map(norm).collect::<Result<_>>()?;
    let test: BTreeSet<Edge> = test.iter().map(norm).collect::<Result<_>>()?;
    if let Some(e) = train.intersection(&test).next() {
        return invalid(format!("edge {e:?} is in both train and test sets"));
    }
    let mut train_nb = vec![BTreeSet::new(); n];
    for &(a, b) in &train {
        train_nb[a].insert(b);
        train_nb[b].insert(a);
    }
    let mut test_nb = vec![Vec::new(); n];
    for &(a, b) in &test {
        test_nb[a].push(b);
        test_nb[b].push(a);
    }
    let mut per_vertex = Vec::new();
    let mut excluded = Vec::new();
    for i in 0..n {
        if test_nb[i].is_empty() {
            continue;
        }
        let candidates: Vec<usize> = (0..n).filter(|&k| k != i && !train_nb[i].contains(&k)).collect();
        if candidates.is_empty() {
            excluded.push(i);
            continue;
        }
        let crr: f64 = test_nb[i]
            .iter()
            .map(|&j| {
                let d = dis.get(i, j);
                let rank = candidates.iter().filter(|&&k| dis.get(i, k) <= d).count();
                1.0 / rank as f64
            })
            .sum();
        let ideal: f64 = (1..=test_nb[i].len()).map(|r| 1.0 / r as f64).sum();
        per_vertex.push((i, crr / ideal));
    }
    if per_vertex.is_empty() {
        return invalid("no vertex has a scorable test edge");
    }
    let value = per_vertex.iter().map(|(_, v)| v).sum::<f64>() / per_vertex.len() as f64;
    Ok(NcrrResult { value, per_vertex, excluded })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub metric: String,
    pub value: f64,
    pub per_item: Vec<f64>,
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
