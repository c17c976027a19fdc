//! Undirected correlation graphs and maximal-acyclic-subgraph edge weights.
//!
//! The weight of an edge is the fraction of the graph's maximal acyclic
//! subgraphs (one spanning tree per connected component) that contain it.
//! It is computed per component from the Laplacian pseudoinverse as
//! `L⁺ᵢᵢ − 2L⁺ᵢⱼ + L⁺ⱼⱼ`. Spanning-tree counting and brute-force enumeration
//! are kept alongside as small-graph oracles.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{determinant, pinv, SymMatrix, DEFAULT_RANK_TOL};
use crate::rng::substream;

pub type Edge = (usize, usize);

pub const MAX_ENUMERATION_EDGES: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph, normalizing each pair to `(min, max)` and sorting.
    /// Self-loops, out-of-range vertices and duplicates are rejected.
    pub fn new(n: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return invalid(format!("edge ({a},{b}) out of range for n={n}"));
            }
            if a == b {
                return invalid(format!("self-loop on vertex {a}"));
            }
            let e = (a.min(b), a.max(b));
            if !set.insert(e) {
                return invalid(format!("duplicate edge ({},{})", e.0, e.1));
            }
        }
        let edges: Vec<Edge> = set.into_iter().collect();
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in &edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj.iter_mut().for_each(|l| l.sort_unstable());
        Ok(Self { n, edges, adj })
    }

    pub fn empty(n: usize) -> Self {
        Self { n, edges: Vec::new(), adj: vec![Vec::new(); n] }
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j)));
        Self::new(n, edges).expect("complete graph is valid")
    }

    pub fn path(n: usize) -> Self {
        Self::new(n, (1..n).map(|i| (i - 1, i))).expect("path is valid")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        a < self.n && self.adj[a].binary_search(&b).is_ok()
    }

    /// Connected components via BFS, each sorted, ordered by smallest member.
    pub fn connected_components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.n];
        let mut parts = Vec::new();
        for start in 0..self.n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut part = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                for &w in &self.adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        part.push(w);
                        queue.push_back(w);
                    }
                }
            }
            part.sort_unstable();
            parts.push(part);
        }
        parts
    }

    pub fn is_acyclic(&self) -> bool {
        self.edges.len() + self.connected_components().len() == self.n
    }

    /// Laplacian of the subgraph induced by `vertices`, indexed in the given order.
    pub fn laplacian(&self, vertices: &[usize]) -> Result<SymMatrix> {
        if vertices.is_empty() {
            return invalid("laplacian of an empty vertex subset");
        }
        let mut pos = vec![usize::MAX; self.n];
        for (k, &v) in vertices.iter().enumerate() {
            if v >= self.n {
                return invalid(format!("vertex {v} out of range"));
            }
            pos[v] = k;
        }
        let m = vertices.len();
        let mut data = vec![0.0; m * m];
        for &(a, b) in &self.edges {
            let (pa, pb) = (pos[a], pos[b]);
            if pa == usize::MAX || pb == usize::MAX {
                continue;
            }
            data[pa * m + pb] -= 1.0;
            data[pb * m + pa] -= 1.0;
            data[pa * m + pa] += 1.0;
            data[pb * m + pb] += 1.0;
        }
        SymMatrix::new(m, data)
    }

    pub fn full_laplacian(&self) -> Result<SymMatrix> {
        let all: Vec<usize> = (0..self.n).collect();
        self.laplacian(&all)
    }
}

fn round_count(det: f64) -> Result<u128> {
    let r = det.round();
    if !det.is_finite() || r < 0.0 || (det - r).abs() > 1e-6 * det.abs().max(1.0) {
        return Err(Error::AmbiguousRounding(det));
    }
    Ok(r as u128)
}

fn det_after_deleting(l: &SymMatrix, drop: &[usize]) -> Result<f64> {
    if drop.len() == l.n() {
        return Ok(1.0);
    }
    Ok(determinant(&l.delete_indices(drop)?))
}

/// Number of spanning trees, as the (0,0)-cofactor of the Laplacian.
/// Returns 0 for disconnected graphs.
pub fn count_spanning_trees(g: &Graph) -> Result<u128> {
    if g.n() == 0 {
        return invalid("graph has no vertices");
    }
    if g.connected_components().len() > 1 {
        return Ok(0);
    }
    let l = g.full_laplacian()?;
    round_count(det_after_deleting(&l, &[0])?)
}

/// Number of spanning trees containing `e`: the Laplacian determinant with rows
/// and columns of both endpoints deleted.
pub fn count_spanning_trees_with_edge(g: &Graph, e: Edge) -> Result<u128> {
    let (a, b) = (e.0.min(e.1), e.0.max(e.1));
    if !g.has_edge(a, b) {
        return invalid(format!("({a},{b}) is not an edge"));
    }
    if g.connected_components().len() > 1 {
        return Ok(0);
    }
    let l = g.full_laplacian()?;
    round_count(det_after_deleting(&l, &[a, b])?)
}

/// Per-edge maximal-acyclic-subgraph weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeWeightMap {
    edges: Vec<Edge>,
    weights: Vec<f64>,
    components: usize,
}

impl EdgeWeightMap {
    /// Builds a map from explicit weights; `edges` must be sorted and unique.
    pub fn from_parts(edges: Vec<Edge>, weights: Vec<f64>, components: usize) -> Result<Self> {
        if edges.len() != weights.len() {
            return invalid("edge and weight counts differ");
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("edges must be sorted and unique");
        }
        Ok(Self { edges, weights, components })
    }

    pub fn get(&self, a: usize, b: usize) -> Option<f64> {
        let e = (a.min(b), a.max(b));
        self.edges.binary_search(&e).ok().map(|k| self.weights[k])
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn iter(&self) -> impl Iterator<Item = (Edge, f64)> + '_ {
        self.edges.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn to_json(&self) -> String {
        let export = WeightExport {
            edges: self.iter().map(|((u, v), w)| WeightEntry { u, v, w }).collect(),
            sum: self.sum(),
            components: self.components,
        };
        serde_json::to_string_pretty(&export).expect("weights serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let export: WeightExport = serde_json::from_str(s)?;
        let mut pairs: Vec<(Edge, f64)> = export
            .edges
            .into_iter()
            .map(|e| ((e.u.min(e.v), e.u.max(e.v)), e.w))
            .collect();
        pairs.sort_by_key(|p| p.0);
        let (edges, weights) = pairs.into_iter().unzip();
        Self::from_parts(edges, weights, export.components)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightEntry {
    u: usize,
    v: usize,
    w: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightExport {
    edges: Vec<WeightEntry>,
    sum: f64,
    components: usize,
}

/// Edge weights per connected component from the pseudoinverse of that
/// component's Laplacian. Acyclic components take weight 1 on every edge.
pub fn mas_edge_weights(g: &Graph) -> Result<EdgeWeightMap> {
    let components = g.connected_components();
    let mut comp_of = vec![0usize; g.n()];
    let mut local = vec![0usize; g.n()];
    for (c, part) in components.iter().enumerate() {
        for (k, &v) in part.iter().enumerate() {
            comp_of[v] = c;
            local[v] = k;
        }
    }
    let mut comp_edges = vec![Vec::new(); components.len()];
    for (idx, &(a, _)) in g.edges().iter().enumerate() {
        comp_edges[comp_of[a]].push(idx);
    }

    let mut weights = vec![0.0; g.num_edges()];
    for (c, part) in components.iter().enumerate() {
        let idxs = &comp_edges[c];
        if idxs.is_empty() {
            continue;
        }
        if idxs.len() + 1 == part.len() {
            idxs.iter().for_each(|&k| weights[k] = 1.0);
            continue;
        }
        let lp = pinv(&g.laplacian(part)?, DEFAULT_RANK_TOL)?;
        for &k in idxs {
            let (a, b) = g.edges()[k];
            let (i, j) = (local[a], local[b]);
            weights[k] = lp.get(i, i) - lp.get(i, j) - lp.get(j, i) + lp.get(j, j);
        }
    }
    EdgeWeightMap::from_parts(g.edges().to_vec(), weights, components.len())
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra] = rb;
        true
    }
}

/// Enumerates every maximal acyclic subgraph by checking all edge subsets
/// against the definition: acyclic, and adding any excluded edge closes a cycle.
/// Exponential; limited to 16 edges.
pub fn enumerate_mas(g: &Graph) -> Result<Vec<Vec<Edge>>> {
    let m = g.num_edges();
    if m > MAX_ENUMERATION_EDGES {
        return Err(Error::TooLarge { edges: m, limit: MAX_ENUMERATION_EDGES });
    }
    let edges = g.edges();
    let mut out = Vec::new();
    for mask in 0u32..(1u32 << m) {
        let mut uf = UnionFind::new(g.n());
        let acyclic = (0..m)
            .filter(|k| mask & (1 << k) != 0)
            .all(|k| uf.union(edges[k].0, edges[k].1));
        if !acyclic {
            continue;
        }
        let maximal = (0..m)
            .filter(|k| mask & (1 << k) == 0)
            .all(|k| uf.find(edges[k].0) == uf.find(edges[k].1));
        if maximal {
            out.push((0..m).filter(|k| mask & (1 << k) != 0).map(|k| edges[k]).collect());
        }
    }
    Ok(out)
}

/// Splits edges into train/test for link prediction. Each vertex with degree
/// `deg >= 1` ends with at least `max(1, ceil(deg/20))` incident test edges;
/// edges already held out for the other endpoint count toward the quota.
pub fn holdout_edges(g: &Graph, seed: u64) -> (Vec<Edge>, Vec<Edge>) {
    let mut rng = substream(seed, "holdout");
    let mut held = vec![false; g.num_edges()];
    let edge_index = |a: usize, b: usize| {
        g.edges().binary_search(&(a.min(b), a.max(b))).expect("incident edge exists")
    };
    for v in 0..g.n() {
        let deg = g.degree(v);
        if deg == 0 {
            continue;
        }
        let quota = deg.div_ceil(20).max(1);
        let incident: Vec<usize> = g.neighbors(v).iter().map(|&w| edge_index(v, w)).collect();
        let already = incident.iter().filter(|&&k| held[k]).count();
        if already >= quota {
            continue;
        }
        let mut free: Vec<usize> = incident.into_iter().filter(|&k| !held[k]).collect();
        free.shuffle(&mut rng);
        for k in free.into_iter().take(quota - already) {
            held[k] = true;
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (k, &e) in g.edges().iter().enumerate() {
        if held[k] {
            test.push(e);
        } else {
            train.push(e);
        }
    }
    (train, test)
}

/// Parses the edge-list format: `n <count>` header then one `i j` pair per line.
pub fn parse_graph(text: &str) -> Result<Graph> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hline, header) = lines.next().ok_or(Error::Parse { line: 1, msg: "missing header".into() })?;
    let mut parts = header.split_whitespace();
    let n = match (parts.next(), parts.next(), parts.next()) {
        (Some("n"), Some(v), None) => v.parse::<usize>().map_err(|e| Error::Parse {
            line: hline + 1,
            msg: format!("bad vertex count: {e}"),
        })?,
        _ => {
            return Err(Error::Parse { line: hline + 1, msg: "expected `n <vertex_count>`".into() })
        }
    };
    let mut seen = BTreeSet::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let perr = |msg: String| Error::Parse { line: lineno, msg };
        let nums: Vec<&str> = line.split_whitespace().collect();
        if nums.len() != 2 {
            return Err(perr("expected `i j`".into()));
        }
        let a: usize = nums[0].parse().map_err(|e| perr(format!("bad vertex: {e}")))?;
        let b: usize = nums[1].parse().map_err(|e| perr(format!("bad vertex: {e}")))?;
        if a >= b {
            return Err(perr(format!("edge ({a},{b}) must satisfy i < j")));
        }
        if b >= n {
            return Err(perr(format!("vertex {b} out of range for n={n}")));
        }
        if !seen.insert((a, b)) {
            return Err(perr(format!("duplicate edge ({a},{b})")));
        }
    }
    Graph::new(n, seen)
}

pub fn write_graph(g: &Graph) -> String {
    let mut s = format!("n {}\n", g.n());
    for &(a, b) in g.edges() {
        let _ = writeln!(s, "{a} {b}");
    }
    s
}

/// Parses a bare edge list (`i j` per line, no header), as used for held-out edge files.
pub fn parse_edge_list(text: &str) -> Result<Vec<Edge>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let nums: Vec<&str> = line.split_whitespace().collect();
        let perr = |msg: String| Error::Parse { line: idx + 1, msg };
        if nums.len() != 2 {
            return Err(perr("expected `i j`".into()));
        }
        let a: usize = nums[0].parse().map_err(|e| perr(format!("bad vertex: {e}")))?;
        let b: usize = nums[1].parse().map_err(|e| perr(format!("bad vertex: {e}")))?;
        out.push((a.min(b), a.max(b)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> Graph {
        Graph::complete(3)
    }

    #[test]
    fn construction_validates() {
        assert!(Graph::new(3, [(0, 0)]).is_err());
        assert!(Graph::new(3, [(0, 3)]).is_err());
        assert!(Graph::new(3, [(0, 1), (1, 0)]).is_err());
        let g = Graph::new(3, [(2, 1), (0, 1)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn components() {
        assert_eq!(Graph::path(4).connected_components().len(), 1);
        let g = Graph::new(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]).unwrap();
        assert_eq!(g.connected_components(), vec![vec![0, 1, 2], vec![3, 4, 5]]);
        assert_eq!(Graph::empty(3).connected_components(), vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn laplacians() {
        let l = Graph::complete(2).full_laplacian().unwrap();
        assert_eq!(l.as_matrix().data(), &[1.0, -1.0, -1.0, 1.0]);
        let l = triangle().full_laplacian().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(l.get(i, j), if i == j { 2.0 } else { -1.0 });
            }
        }
        let g = Graph::new(5, [(0, 1), (1, 2), (2, 3), (1, 4), (0, 4)]).unwrap();
        let l = g.full_laplacian().unwrap();
        for i in 0..5 {
            assert_eq!((0..5).map(|j| l.get(i, j)).sum::<f64>(), 0.0);
        }
        assert!(g.laplacian(&[]).is_err());
    }

    #[test]
    fn spanning_tree_counts() {
        assert_eq!(count_spanning_trees(&Graph::complete(4)).unwrap(), 16);
        assert_eq!(count_spanning_trees(&Graph::path(6)).unwrap(), 1);
        assert_eq!(count_spanning_trees(&triangle()).unwrap(), 3);
        assert_eq!(count_spanning_trees(&Graph::empty(3)).unwrap(), 0);
        assert_eq!(count_spanning_trees(&Graph::empty(1)).unwrap(), 1);
    }

    #[test]
    fn spanning_tree_counts_with_edge() {
        for &e in triangle().edges() {
            assert_eq!(count_spanning_trees_with_edge(&triangle(), e).unwrap(), 2);
        }
        let p = Graph::path(5);
        for &e in p.edges() {
            assert_eq!(count_spanning_trees_with_edge(&p, e).unwrap(), 1);
        }
        let k4 = Graph::complete(4);
        for &e in k4.edges() {
            assert_eq!(count_spanning_trees_with_edge(&k4, e).unwrap(), 8);
        }
        assert!(count_spanning_trees_with_edge(&p, (0, 2)).is_err());
    }

    #[test]
    fn complete_graph_weights() {
        for n in 3..=10 {
            let w = mas_edge_weights(&Graph::complete(n)).unwrap();
            for (_, x) in w.iter() {
                assert!((x - 2.0 / n as f64).abs() < 1e-9, "n={n} w={x}");
            }
        }
    }

    #[test]
    fn tree_weights_are_one() {
        let g = Graph::new(6, [(0, 1), (0, 2), (2, 3), (2, 4), (4, 5)]).unwrap();
        let w = mas_edge_weights(&g).unwrap();
        assert!(w.weights().iter().all(|&x| x == 1.0));
        assert_eq!(w.components(), 1);
    }

    #[test]
    fn bridge_weight_is_one() {
        // two triangles joined by the bridge (2,3)
        let g = Graph::new(6, [(0, 1), (1, 2), (0, 2), (2, 3), (3, 4), (4, 5), (3, 5)]).unwrap();
        let w = mas_edge_weights(&g).unwrap();
        assert!((w.get(2, 3).unwrap() - 1.0).abs() < 1e-9);
        assert!((w.get(0, 1).unwrap() - 2.0 / 3.0).abs() < 1e-9);
        assert!((w.sum() - 5.0).abs() < 1e-8);
    }

    #[test]
    fn enumeration_small_cases() {
        let t = enumerate_mas(&triangle()).unwrap();
        assert_eq!(t.len(), 3);
        assert!(t.iter().all(|s| s.len() == 2));
        let p = Graph::path(5);
        assert_eq!(enumerate_mas(&p).unwrap(), vec![p.edges().to_vec()]);
        assert!(matches!(enumerate_mas(&Graph::complete(7)), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn enumeration_multiplies_over_components() {
        // K4 (16 trees) beside a triangle (3 trees): 48 maximal acyclic subgraphs
        let mut edges: Vec<Edge> = Graph::complete(4).edges().to_vec();
        edges.extend([(4, 5), (5, 6), (4, 6)]);
        let g = Graph::new(7, edges).unwrap();
        assert_eq!(enumerate_mas(&g).unwrap().len(), 48);
    }

    #[test]
    fn holdout_star() {
        let g = Graph::new(6, (1..6).map(|i| (0, i))).unwrap();
        let (train, test) = holdout_edges(&g, 3);
        assert_eq!(test.len(), 5);
        assert!(train.is_empty());
        let (train, test) = holdout_edges(&Graph::empty(4), 3);
        assert!(train.is_empty() && test.is_empty());
    }

    #[test]
    fn holdout_quota_for_high_degree() {
        let g = Graph::new(42, (1..42).map(|i| (0, i))).unwrap();
        let (_, test) = holdout_edges(&g, 1);
        // every leaf needs its own edge; the hub's quota of 3 is already met
        assert_eq!(test.len(), 41);
        let g = Graph::complete(45);
        let (train, test) = holdout_edges(&g, 9);
        for v in 0..45 {
            let t = test.iter().filter(|e| e.0 == v || e.1 == v).count();
            assert!(t >= 3, "vertex {v} has {t} held out");
        }
        assert_eq!(train.len() + test.len(), g.num_edges());
        assert_eq!(holdout_edges(&g, 9), (train, test));
    }

    #[test]
    fn parse_and_write() {
        let g = parse_graph("n 4\n0 1\n1 2\n2 3\n").unwrap();
        assert_eq!(g.num_edges(), 3);
        assert_eq!(write_graph(&g), "n 4\n0 1\n1 2\n2 3\n");
        match parse_graph("n 4\n0 1\n0 1\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_graph("n 3\n1 0\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_graph("n 3\n0 5\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_graph("nodes 3\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_graph("n 3\n0 x\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn weight_json_roundtrip() {
        let w = mas_edge_weights(&Graph::complete(4)).unwrap();
        let back = EdgeWeightMap::from_json(&w.to_json()).unwrap();
        assert_eq!(back, w);
        let v: serde_json::Value = serde_json::from_str(&w.to_json()).unwrap();
        assert_eq!(v["components"], 1);
        assert!((v["sum"].as_f64().unwrap() - 3.0).abs() < 1e-9);
        assert_eq!(v["edges"][0]["u"], 0);
    }
}
