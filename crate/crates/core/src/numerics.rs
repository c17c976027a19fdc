//! Dense linear algebra kernels: symmetric eigendecomposition (cyclic Jacobi),
//! Moore–Penrose pseudoinverse, LU determinant and first principal component.

use crate::error::{invalid, Error, Result};
use rayon::prelude::*;

pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return invalid(format!(
                "matrix data has {} entries, expected {}x{}",
                data.len(),
                rows,
                cols
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return invalid("ragged rows");
        }
        Ok(Self { rows: rows.len(), cols, data: rows.concat() })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return invalid(format!(
                "matmul shape mismatch: {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = out.row_mut(i);
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Square symmetric matrix. Symmetry is checked exactly at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return invalid("symmetric matrix must have n >= 1");
        }
        Self::from_matrix(Matrix::from_vec(n, n, data)?)
    }

    pub fn from_matrix(m: Matrix) -> Result<Self> {
        if m.rows != m.cols {
            return invalid("symmetric matrix must be square");
        }
        if m.rows == 0 {
            return invalid("symmetric matrix must have n >= 1");
        }
        for i in 0..m.rows {
            for j in (i + 1)..m.rows {
                if m.get(i, j) != m.get(j, i) {
                    return invalid(format!("matrix not symmetric at ({i},{j})"));
                }
            }
        }
        Ok(Self(m))
    }

    /// Builds a symmetric matrix from the upper triangle produced by `f(i, j)`, `i <= j`.
    pub fn from_upper(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        if n == 0 {
            return invalid("symmetric matrix must have n >= 1");
        }
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        Ok(Self(m))
    }

    pub fn identity(n: usize) -> Self {
        Self(Matrix::identity(n))
    }

    pub fn diag(values: &[f64]) -> Result<Self> {
        Self::from_upper(values.len(), |i, j| if i == j { values[i] } else { 0.0 })
    }

    pub fn n(&self) -> usize {
        self.0.rows
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.frobenius_norm()
    }

    /// Principal submatrix on the kept indices (in the given order).
    pub fn principal_submatrix(&self, keep: &[usize]) -> Result<SymMatrix> {
        SymMatrix::from_upper(keep.len(), |a, b| self.get(keep[a], keep[b]))
    }

    /// Principal submatrix with the listed indices deleted.
    pub fn delete_indices(&self, drop: &[usize]) -> Result<SymMatrix> {
        let keep: Vec<usize> = (0..self.n()).filter(|i| !drop.contains(i)).collect();
        self.principal_submatrix(&keep)
    }
}

#[derive(Debug, Clone)]
pub struct EigenDecomp {
    /// Ascending.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns, in the order of `values`.
    pub vectors: Matrix,
}

impl EigenDecomp {
    pub fn vector(&self, k: usize) -> Vec<f64> {
        self.vectors.column(k)
    }

    /// Q·diag(λ)·Qᵀ
    pub fn reconstruct(&self) -> Matrix {
        let n = self.values.len();
        Matrix::from_fn(n, n, |i, j| {
            (0..n)
                .map(|k| self.vectors.get(i, k) * self.values[k] * self.vectors.get(j, k))
                .sum()
        })
    }
}

const MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn sym_eigendecomp(a: &SymMatrix) -> Result<EigenDecomp> {
    let n = a.n();
    if a.0.data.iter().any(|v| !v.is_finite()) {
        return invalid("matrix has non-finite entries");
    }
    let mut m = a.0.data.clone();
    let mut v = Matrix::identity(n).data;
    let norm = a.frobenius_norm();

    if norm > 0.0 && n > 1 {
        let stop = 1e-14 * norm;
        let skip = 1e-17 * norm / n as f64;
        let rounds = round_robin(n);
        let mut rotations: Vec<(usize, usize, f64, f64)> = Vec::with_capacity(n / 2);
        for sweep in 0..MAX_SWEEPS {
            let off = off_diagonal_norm(&m, n);
            if off <= stop {
                break;
            }
            // early sweeps only rotate the larger elements
            let thresh = if sweep < 3 { 0.2 * off / (n * n) as f64 } else { skip };
            for round in &rounds {
                rotations.clear();
                for &(p, q) in round {
                    let apq = m[p * n + q];
                    if apq.abs() > thresh {
                        let (c, s) = rotation(m[p * n + p], m[q * n + q], apq);
                        rotations.push((p, q, c, s));
                    }
                }
                if rotations.is_empty() {
                    continue;
                }
                apply_left(&mut m, n, &rotations);
                apply_right(&mut m, n, &rotations);
                for &(p, q, _, _) in &rotations {
                    m[p * n + q] = 0.0;
                    m[q * n + p] = 0.0;
                }
                apply_right(&mut v, n, &rotations);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].total_cmp(&m[j * n + j]).then(i.cmp(&j)));
    let values = order.iter().map(|&k| m[k * n + k]).collect();
    let vectors = Matrix::from_fn(n, n, |i, c| v[i * n + order[c]]);
    Ok(EigenDecomp { values, vectors })
}

fn off_diagonal_norm(m: &[f64], n: usize) -> f64 {
    m.chunks(n)
        .enumerate()
        .map(|(i, row)| row[i + 1..].iter().map(|x| 2.0 * x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Cosine and sine zeroing `a_pq`.
fn rotation(app: f64, aqq: f64, apq: f64) -> (f64, f64) {
    let theta = (aqq - app) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let c = 1.0 / (t * t + 1.0).sqrt();
    (c, t * c)
}

/// Round-robin schedule: every unordered pair exactly once, each round a set
/// of disjoint pairs.
fn round_robin(n: usize) -> Vec<Vec<(usize, usize)>> {
    let m = n + n % 2;
    let mut ring: Vec<usize> = (0..m).collect();
    let mut rounds = Vec::with_capacity(m - 1);
    for _ in 0..m - 1 {
        let round = (0..m / 2)
            .map(|k| (ring[k], ring[m - 1 - k]))
            .filter(|&(a, b)| a < n && b < n)
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        rounds.push(round);
        ring[1..].rotate_right(1);
    }
    rounds
}

/// `A ← A J` for disjoint plane rotations; rows are independent.
fn apply_right(a: &mut [f64], n: usize, rotations: &[(usize, usize, f64, f64)]) {
    a.par_chunks_mut(n).for_each(|row| {
        for &(p, q, c, s) in rotations {
            let (x, y) = (row[p], row[q]);
            row[p] = c * x - s * y;
            row[q] = s * x + c * y;
        }
    });
}

/// `A ← Jᵀ A`: each rotation mixes two contiguous rows.
fn apply_left(a: &mut [f64], n: usize, rotations: &[(usize, usize, f64, f64)]) {
    for &(p, q, c, s) in rotations {
        let (head, tail) = a.split_at_mut(q * n);
        let row_p = &mut head[p * n..(p + 1) * n];
        for (x, y) in row_p.iter_mut().zip(&mut tail[..n]) {
            let (xp, yq) = (*x, *y);
            *x = c * xp - s * yq;
            *y = s * xp + c * yq;
        }
    }
}

/// Moore–Penrose pseudoinverse. Eigenvalues with `|λ| <= rank_tol * max|λ|` are
/// treated as zero.
pub fn pinv(a: &SymMatrix, rank_tol: f64) -> Result<SymMatrix> {
    let n = a.n();
    let eig = sym_eigendecomp(a)?;
    let max_abs = eig.values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let cutoff = rank_tol * max_abs;
    let kept: Vec<(usize, f64)> = eig
        .values
        .iter()
        .enumerate()
        .filter(|(_, l)| max_abs > 0.0 && l.abs() > cutoff)
        .map(|(k, l)| (k, 1.0 / l))
        .collect();
    SymMatrix::from_upper(n, |i, j| {
        kept.iter()
            .map(|&(k, inv)| eig.vectors.get(i, k) * inv * eig.vectors.get(j, k))
            .sum()
    })
}

/// Determinant by LU decomposition with partial pivoting.
pub fn determinant(a: &SymMatrix) -> f64 {
    lu_determinant(a.n(), a.0.data.clone())
}

fn lu_determinant(n: usize, mut m: Vec<f64>) -> f64 {
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))
            .unwrap_or(col);
        let pv = m[pivot * n + col];
        if pv == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for k in 0..n {
                m.swap(pivot * n + k, col * n + k);
            }
            det = -det;
        }
        det *= pv;
        for r in (col + 1)..n {
            let f = m[r * n + col] / pv;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[r * n + k] -= f * m[col * n + k];
            }
        }
    }
    det
}

#[derive(Debug, Clone)]
pub struct PrincipalComponent {
    /// Unit-norm direction; sign fixed so its largest-magnitude coordinate is positive.
    pub direction: Vec<f64>,
    /// Centered rows projected onto `direction`.
    pub scores: Vec<f64>,
    /// Sample variance (n − 1 denominator) along `direction`.
    pub variance: f64,
}

/// First principal component of the mean-centered rows of `x`.
pub fn first_principal_component(x: &Matrix) -> Result<PrincipalComponent> {
    let (n, d) = (x.rows(), x.cols());
    if n < 2 {
        return invalid("PCA needs at least two rows");
    }
    if d == 0 {
        return invalid("PCA needs at least one column");
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = Matrix::from_fn(n, d, |i, j| x.get(i, j) - mean[j]);
    if centered.data.iter().all(|v| *v == 0.0) {
        return Err(Error::DegenerateData("all rows are identical".into()));
    }
    let cov = SymMatrix::from_upper(d, |a, b| {
        (0..n).map(|i| centered.get(i, a) * centered.get(i, b)).sum::<f64>() / (n - 1) as f64
    })?;
    let eig = sym_eigendecomp(&cov)?;
    let variance = eig.values[d - 1];
    if variance <= 0.0 {
        return Err(Error::DegenerateData("zero variance".into()));
    }
    let mut direction = eig.vector(d - 1);
    let lead = direction
        .iter()
        .copied()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
        .map(|(_, v)| v)
        .unwrap_or(1.0);
    if lead < 0.0 {
        direction.iter_mut().for_each(|v| *v = -*v);
    }
    let scores = (0..n)
        .map(|i| centered.row(i).iter().zip(&direction).map(|(a, b)| a * b).sum())
        .collect();
    Ok(PrincipalComponent { direction, scores, variance })
}
