//! Two-layer feedforward networks with hand-written reverse-mode gradients,
//! the Adam update, and a central finite-difference gradient checker.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::Rng;

static NEXT_GENERATION: AtomicU64 = AtomicU64::new(1);

fn fresh_generation() -> u64 {
    NEXT_GENERATION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation and the output.
    #[inline]
    fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - out * out,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// `y = W2 · act(W1 · x + b1) + b2`, weights row-major (`W1` is hidden×in).
#[derive(Debug, Clone)]
pub struct Mlp {
    in_dim: usize,
    hidden_dim: usize,
    out_dim: usize,
    activation: Activation,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    generation: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.in_dim == other.in_dim
            && self.hidden_dim == other.hidden_dim
            && self.out_dim == other.out_dim
            && self.activation == other.activation
            && self.w1 == other.w1
            && self.b1 == other.b1
            && self.w2 == other.w2
            && self.b2 == other.b2
    }
}

/// Intermediates saved by [`Mlp::forward`] for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    x: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
    generation: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl MlpGrads {
    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn blocks(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn is_zero(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| *v == 0.0))
    }
}

pub const BLOCK_NAMES: [&str; 4] = ["W1", "b1", "W2", "b2"];

impl Mlp {
    pub fn zeros(in_dim: usize, hidden_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            hidden_dim,
            out_dim,
            activation,
            w1: vec![0.0; hidden_dim * in_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; out_dim * hidden_dim],
            b2: vec![0.0; out_dim],
            generation: fresh_generation(),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(
        in_dim: usize,
        hidden_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut Rng,
    ) -> Self {
        let mut net = Self::zeros(in_dim, hidden_dim, out_dim, activation);
        let l1 = (6.0 / (in_dim + hidden_dim) as f64).sqrt();
        net.w1.iter_mut().for_each(|w| *w = rng.random_range(-l1..l1));
        let l2 = (6.0 / (hidden_dim + out_dim) as f64).sqrt();
        net.w2.iter_mut().for_each(|w| *w = rng.random_range(-l2..l2));
        net
    }

    pub fn from_parts(
        in_dim: usize,
        hidden_dim: usize,
        out_dim: usize,
        activation: Activation,
        [w1, b1, w2, b2]: [Vec<f64>; 4],
    ) -> Result<Self> {
        if w1.len() != hidden_dim * in_dim
            || b1.len() != hidden_dim
            || w2.len() != out_dim * hidden_dim
            || b2.len() != out_dim
        {
            return invalid("parameter shapes do not match layer sizes");
        }
        if [&w1, &b1, &w2, &b2].iter().any(|b| b.iter().any(|v| !v.is_finite())) {
            return invalid("parameters must be finite");
        }
        Ok(Self {
            in_dim,
            hidden_dim,
            out_dim,
            activation,
            w1,
            b1,
            w2,
            b2,
            generation: fresh_generation(),
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn blocks(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    /// Mutable parameter access. Invalidates outstanding forward caches.
    pub fn blocks_mut(&mut self) -> [&mut [f64]; 4] {
        self.generation = fresh_generation();
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.b2.len()],
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.blocks().concat()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return invalid("flat parameter length mismatch");
        }
        let mut off = 0;
        for b in self.blocks_mut() {
            b.copy_from_slice(&flat[off..off + b.len()]);
            off += b.len();
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        if x.len() != self.in_dim {
            return invalid(format!("input has length {}, expected {}", x.len(), self.in_dim));
        }
        let mut pre = self.b1.clone();
        for (h, p) in pre.iter_mut().enumerate() {
            let row = &self.w1[h * self.in_dim..(h + 1) * self.in_dim];
            *p += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        let hidden: Vec<f64> = pre.iter().map(|&p| self.activation.apply(p)).collect();
        let mut y = self.b2.clone();
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.w2[o * self.hidden_dim..(o + 1) * self.hidden_dim];
            *yo += row.iter().zip(&hidden).map(|(w, v)| w * v).sum::<f64>();
        }
        let cache = ForwardCache { x: x.to_vec(), pre, hidden, generation: self.generation };
        Ok((y, cache))
    }

    /// Accumulates the gradient of `yᵀdy` into `grads` and returns `∂(yᵀdy)/∂x`.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        dy: &[f64],
        grads: &mut MlpGrads,
    ) -> Result<Vec<f64>> {
        if cache.generation != self.generation {
            return Err(Error::InvalidState("forward cache is stale".into()));
        }
        if dy.len() != self.out_dim {
            return invalid("output gradient length mismatch");
        }
        let hd = self.hidden_dim;
        let mut dh = vec![0.0; hd];
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grads.b2[o] += g;
            let row = &self.w2[o * hd..(o + 1) * hd];
            let grow = &mut grads.w2[o * hd..(o + 1) * hd];
            for h in 0..hd {
                grow[h] += g * cache.hidden[h];
                dh[h] += g * row[h];
            }
        }
        let mut dx = vec![0.0; self.in_dim];
        for h in 0..hd {
            let dpre = dh[h] * self.activation.derivative(cache.pre[h], cache.hidden[h]);
            if dpre == 0.0 {
                continue;
            }
            grads.b1[h] += dpre;
            let row = &self.w1[h * self.in_dim..(h + 1) * self.in_dim];
            let grow = &mut grads.w1[h * self.in_dim..(h + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += dpre * cache.x[i];
                dx[i] += dpre * row[i];
            }
        }
        Ok(dx)
    }

    pub fn backward(&self, cache: &ForwardCache, dy: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        let mut grads = self.zero_grads();
        let dx = self.backward_into(cache, dy, &mut grads)?;
        Ok((grads, dx))
    }

    pub fn to_checkpoint(&self) -> MlpCheckpoint {
        let shapes = [
            vec![self.hidden_dim, self.in_dim],
            vec![self.hidden_dim],
            vec![self.out_dim, self.hidden_dim],
            vec![self.out_dim],
        ];
        MlpCheckpoint {
            activation: self.activation,
            tensors: BLOCK_NAMES
                .iter()
                .zip(shapes)
                .zip(self.blocks())
                .map(|((name, shape), data)| NamedTensor {
                    name: (*name).to_string(),
                    shape,
                    data: data.to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &MlpCheckpoint) -> Result<Self> {
        let find = |name: &str| {
            ck.tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::InvalidInput(format!("checkpoint missing tensor {name}")))
        };
        let w1 = find("W1")?;
        let w2 = find("W2")?;
        if w1.shape.len() != 2 || w2.shape.len() != 2 {
            return invalid("weight tensors must be 2-D");
        }
        let (hidden, in_dim, out_dim) = (w1.shape[0], w1.shape[1], w2.shape[0]);
        Self::from_parts(
            in_dim,
            hidden,
            out_dim,
            ck.activation,
            [w1.data.clone(), find("b1")?.data.clone(), w2.data.clone(), find("b2")?.data.clone()],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub activation: Activation,
    pub tensors: Vec<NamedTensor>,
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub const DEFAULT_LR: f64 = 1e-3;

    pub fn new(block_sizes: &[usize], lr: f64) -> Self {
        Self {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
            m: block_sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: block_sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    /// One descent step on `params` along `grads`. All gradients are checked
    /// for finiteness before any parameter is touched.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return invalid("adam block count mismatch");
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.len() != m.len() || g.len() != m.len() {
                return invalid("adam block shape mismatch");
            }
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteGradient { step: self.step });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for k in 0..p.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                p[k] -= self.lr * mhat / (vhat.sqrt() + self.eps_hat);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockError {
    pub name: String,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockError>,
    pub max_rel_err: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Floor on the denominator of the relative error so coordinates whose true
/// gradient is ~0 are judged on absolute error.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compares `analytic` against central differences of `loss` with step `h`.
/// `blocks` names contiguous ranges of the flat parameter vector.
pub fn grad_check(
    mut loss: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    blocks: &[(String, std::ops::Range<usize>)],
    h: f64,
    tol: f64,
) -> GradCheckReport {
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    let mut p = params.to_vec();
    let mut out = Vec::with_capacity(blocks.len());
    for (name, range) in blocks {
        let mut worst = 0.0_f64;
        for k in range.clone() {
            let orig = p[k];
            p[k] = orig + h;
            let up = loss(&p);
            p[k] = orig - h;
            let down = loss(&p);
            p[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let denom = analytic[k].abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            worst = worst.max((analytic[k] - numeric).abs() / denom);
        }
        out.push(BlockError { name: name.clone(), max_rel_err: worst });
    }
    let max_rel_err = out.iter().map(|b| b.max_rel_err).fold(0.0, f64::max);
    GradCheckReport { blocks: out, max_rel_err, tol, passed: max_rel_err < tol }
}
