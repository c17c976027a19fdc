//! Generative model, variational families, objectives and the stochastic
//! training loop.
//!
//! All objectives are *maximized*. They share one evaluation engine driven by
//! a [`TermPlan`]: a list of singleton terms (reconstruction + KL), positive
//! edge terms weighted by spanning-tree fractions, and negative pair terms
//! (mutual-information regularizer), each with its own multiplier. Full-batch
//! objectives use unit multipliers; minibatches rescale each group so the
//! estimate is unbiased for the full sum.
//!
//! The acyclic-graph objectives and the plain ELBO are also written out
//! directly (value only) so the engine can be checked against them.

use std::ops::Range;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gaussian::{
    cross_ratio_dim, cross_ratio_expectation, kl_pair, kl_pair_dim, kl_singleton,
    kl_singleton_dim, mutual_information_dim, sample, DiagGaussian, PairGaussian, PriorConfig,
};
use crate::graph::{mas_edge_weights, Edge, EdgeWeightMap, Graph};
use crate::nn::{Activation, AdamState, ForwardCache, Mlp, MlpCheckpoint, MlpGrads, BLOCK_NAMES};
use crate::numerics::Matrix;
use crate::rng::{standard_normals, substream, Rng};

/// Keeps `|ρ| < 1` after floating-point saturation of `tanh`.
const RHO_LIMIT: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Vae,
    CvaeInd,
    CvaeCorr,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Vae => "vae",
            Variant::CvaeInd => "cvae_ind",
            Variant::CvaeCorr => "cvae_corr",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vae" => Ok(Variant::Vae),
            "cvae_ind" => Ok(Variant::CvaeInd),
            "cvae_corr" => Ok(Variant::CvaeCorr),
            other => invalid(format!("unknown variant {other}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Likelihood {
    Bernoulli,
    Multinomial,
}

impl std::str::FromStr for Likelihood {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bernoulli" => Ok(Likelihood::Bernoulli),
            "multinomial" => Ok(Likelihood::Multinomial),
            other => invalid(format!("unknown likelihood {other}")),
        }
    }
}

#[inline]
fn softplus(l: f64) -> f64 {
    l.max(0.0) + (-l.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(l: f64) -> f64 {
    if l >= 0.0 {
        1.0 / (1.0 + (-l).exp())
    } else {
        let e = l.exp();
        e / (1.0 + e)
    }
}

fn validate_row(likelihood: Likelihood, x: &[f64]) -> Result<()> {
    match likelihood {
        Likelihood::Bernoulli if x.iter().any(|v| !(0.0..=1.0).contains(v)) => {
            invalid("bernoulli observations must lie in [0, 1]")
        }
        Likelihood::Multinomial if x.iter().any(|v| !(*v >= 0.0 && v.is_finite())) => {
            invalid("multinomial counts must be non-negative")
        }
        _ => Ok(()),
    }
}

/// `log p(x | logits)` and its gradient with respect to the logits. The
/// multinomial coefficient is dropped.
fn log_likelihood_with_grad(likelihood: Likelihood, x: &[f64], logits: &[f64]) -> (f64, Vec<f64>) {
    match likelihood {
        Likelihood::Bernoulli => {
            let mut ll = 0.0;
            let grad = x
                .iter()
                .zip(logits)
                .map(|(&xv, &l)| {
                    ll += xv * l - softplus(l);
                    xv - sigmoid(l)
                })
                .collect();
            (ll, grad)
        }
        Likelihood::Multinomial => {
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
            let total: f64 = x.iter().sum();
            let ll = x.iter().zip(logits).map(|(xv, l)| xv * (l - lse)).sum();
            let grad = x
                .iter()
                .zip(logits)
                .map(|(xv, l)| xv - total * (l - lse).exp())
                .collect();
            (ll, grad)
        }
    }
}

/// `log p(x | logits)` with validation of the observation vector.
pub fn log_likelihood(likelihood: Likelihood, x: &[f64], logits: &[f64]) -> Result<f64> {
    if x.len() != logits.len() {
        return invalid("observation and logit lengths differ");
    }
    validate_row(likelihood, x)?;
    Ok(log_likelihood_with_grad(likelihood, x, logits).0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvaeModel {
    /// `x → (μ, log σ)`
    pub encoder: Mlp,
    /// `(x_i ‖ x_j) → raw correlation`; present only for `cvae_corr`.
    pub pair_net: Option<Mlp>,
    /// `z → logits`
    pub decoder: Mlp,
    pub prior: PriorConfig,
    pub likelihood: Likelihood,
    pub variant: Variant,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelShape {
    pub data_dim: usize,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub tau: f64,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub encoder: MlpGrads,
    pub pair_net: Option<MlpGrads>,
    pub decoder: MlpGrads,
}

impl ModelGrads {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = self.encoder.blocks().concat();
        if let Some(p) = &self.pair_net {
            out.extend(p.blocks().concat());
        }
        out.extend(self.decoder.blocks().concat());
        out
    }
}

impl CvaeModel {
    pub fn new(
        variant: Variant,
        likelihood: Likelihood,
        shape: ModelShape,
        seed: u64,
    ) -> Result<Self> {
        let ModelShape { data_dim, latent_dim, hidden_dim, tau, activation } = shape;
        if data_dim == 0 || hidden_dim == 0 {
            return invalid("data and hidden dimensions must be positive");
        }
        let prior = PriorConfig::new(tau, latent_dim)?;
        let mut rng = substream(seed, "init");
        let encoder = Mlp::init(data_dim, hidden_dim, 2 * latent_dim, activation, &mut rng);
        let decoder = Mlp::init(latent_dim, hidden_dim, data_dim, activation, &mut rng);
        let pair_net = (variant == Variant::CvaeCorr)
            .then(|| Mlp::init(2 * data_dim, hidden_dim, latent_dim, activation, &mut rng));
        Ok(Self { encoder, pair_net, decoder, prior, likelihood, variant, seed })
    }

    pub fn data_dim(&self) -> usize {
        self.decoder.out_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.prior.d()
    }

    /// Singleton variational density `q(z | x)`.
    pub fn encode(&self, x: &[f64]) -> Result<DiagGaussian> {
        let (out, _) = self.encoder.forward(x)?;
        let d = self.latent_dim();
        DiagGaussian::from_log_sigma(out[..d].to_vec(), &out[d..])
    }

    /// Per-dimension correlation of `q(z_i, z_j | x_i, x_j)`, symmetrized over
    /// input order. Zero when the model has no pair network.
    pub fn pair_rho(&self, xi: &[f64], xj: &[f64]) -> Result<Vec<f64>> {
        let d = self.latent_dim();
        let Some(net) = &self.pair_net else {
            return Ok(vec![0.0; d]);
        };
        let (r1, _) = net.forward(&[xi, xj].concat())?;
        let (r2, _) = net.forward(&[xj, xi].concat())?;
        Ok(r1
            .iter()
            .zip(&r2)
            .map(|(a, b)| (0.5 * (a.tanh() + b.tanh())).clamp(-RHO_LIMIT, RHO_LIMIT))
            .collect())
    }

    pub fn pair_density(&self, xi: &[f64], xj: &[f64]) -> Result<PairGaussian> {
        PairGaussian::new(self.encode(xi)?, self.encode(xj)?, self.pair_rho(xi, xj)?)
    }

    /// `log p_θ(x | z)`.
    pub fn log_likelihood(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        let (logits, _) = self.decoder.forward(z)?;
        log_likelihood(self.likelihood, x, &logits)
    }

    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads {
            encoder: self.encoder.zero_grads(),
            pair_net: self.pair_net.as_ref().map(Mlp::zero_grads),
            decoder: self.decoder.zero_grads(),
        }
    }

    fn nets(&self) -> Vec<(&'static str, &Mlp)> {
        let mut v = vec![("encoder", &self.encoder)];
        if let Some(p) = &self.pair_net {
            v.push(("pair_net", p));
        }
        v.push(("decoder", &self.decoder));
        v
    }

    /// Flattened parameters in the order encoder, pair net, decoder.
    pub fn flat_params(&self) -> Vec<f64> {
        self.nets().iter().flat_map(|(_, n)| n.flat_params()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.nets().iter().map(|(_, n)| n.num_params()).sum();
        if flat.len() != total {
            return invalid("flat parameter length mismatch");
        }
        let mut off = 0;
        let mut take = |net: &mut Mlp| {
            let k = net.num_params();
            let r = net.set_flat_params(&flat[off..off + k]);
            off += k;
            r
        };
        take(&mut self.encoder)?;
        if let Some(p) = &mut self.pair_net {
            take(p)?;
        }
        take(&mut self.decoder)
    }

    /// Named ranges of the flat parameter vector, one per tensor.
    pub fn param_blocks(&self) -> Vec<(String, Range<usize>)> {
        let mut out = Vec::new();
        let mut off = 0;
        for (net_name, net) in self.nets() {
            for (bname, block) in BLOCK_NAMES.iter().zip(net.blocks()) {
                out.push((format!("{net_name}.{bname}"), off..off + block.len()));
                off += block.len();
            }
        }
        out
    }

    fn check_data(&self, data: &Matrix) -> Result<()> {
        if data.cols() != self.data_dim() {
            return invalid(format!(
                "data has {} columns, model expects {}",
                data.cols(),
                self.data_dim()
            ));
        }
        for i in 0..data.rows() {
            validate_row(self.likelihood, data.row(i))?;
        }
        Ok(())
    }

    fn check_noise(&self, data: &Matrix, noise: &Matrix) -> Result<()> {
        if noise.rows() != data.rows() || noise.cols() != self.latent_dim() {
            return invalid("noise must be n x d");
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            variant: self.variant,
            likelihood: self.likelihood,
            tau: self.prior.tau(),
            latent_dim: self.latent_dim(),
            data_dim: self.data_dim(),
            seed: self.seed,
            encoder: self.encoder.to_checkpoint(),
            pair_net: self.pair_net.as_ref().map(Mlp::to_checkpoint),
            decoder: self.decoder.to_checkpoint(),
        }
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT {
            return invalid(format!("unknown checkpoint format {}", ck.format));
        }
        let model = Self {
            encoder: Mlp::from_checkpoint(&ck.encoder)?,
            pair_net: ck.pair_net.as_ref().map(Mlp::from_checkpoint).transpose()?,
            decoder: Mlp::from_checkpoint(&ck.decoder)?,
            prior: PriorConfig::new(ck.tau, ck.latent_dim)?,
            likelihood: ck.likelihood,
            variant: ck.variant,
            seed: ck.seed,
        };
        let d = ck.latent_dim;
        let ok = model.encoder.in_dim() == ck.data_dim
            && model.encoder.out_dim() == 2 * d
            && model.decoder.in_dim() == d
            && model.decoder.out_dim() == ck.data_dim
            && model
                .pair_net
                .as_ref()
                .is_none_or(|p| p.in_dim() == 2 * ck.data_dim && p.out_dim() == d)
            && (model.pair_net.is_some() == (ck.variant == Variant::CvaeCorr));
        if !ok {
            return invalid("checkpoint network shapes are inconsistent");
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_checkpoint()).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_checkpoint(&serde_json::from_str(s)?)
    }
}

pub const CHECKPOINT_FORMAT: &str = "cvae-checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format: String,
    pub variant: Variant,
    pub likelihood: Likelihood,
    pub tau: f64,
    pub latent_dim: usize,
    pub data_dim: usize,
    pub seed: u64,
    pub encoder: MlpCheckpoint,
    pub pair_net: Option<MlpCheckpoint>,
    pub decoder: MlpCheckpoint,
}

// ---------------------------------------------------------------------------
// Direct (value-only) objectives

fn encode_all(model: &CvaeModel, data: &Matrix) -> Result<Vec<DiagGaussian>> {
    (0..data.rows()).map(|i| model.encode(data.row(i))).collect()
}

/// Standard ELBO: `Σ_i [log p(x_i | z_i) − KL(q(z_i|x_i) || N(0, I))]` with one
/// reparameterized sample `z_i = μ_i + σ_i ⊙ noise_i` per point.
pub fn elbo_vae(model: &CvaeModel, data: &Matrix, noise: &Matrix) -> Result<f64> {
    model.check_data(data)?;
    model.check_noise(data, noise)?;
    let qs = encode_all(model, data)?;
    let mut total = 0.0;
    for (i, q) in qs.iter().enumerate() {
        let z = sample(q, noise.row(i));
        total += model.log_likelihood(data.row(i), &z)? - kl_singleton(q);
    }
    Ok(total)
}

fn require_acyclic(graph: &Graph, data: &Matrix) -> Result<()> {
    if graph.n() != data.rows() {
        return invalid("graph vertex count differs from data rows");
    }
    if !graph.is_acyclic() {
        return Err(Error::NotAcyclic);
    }
    Ok(())
}

/// Factorized variational family on an acyclic graph: the ELBO plus the
/// expected log prior ratio of every edge.
pub fn elbo_cvae_ind_acyclic(
    model: &CvaeModel,
    data: &Matrix,
    graph: &Graph,
    noise: &Matrix,
) -> Result<f64> {
    require_acyclic(graph, data)?;
    let base = elbo_vae(model, data, noise)?;
    let qs = encode_all(model, data)?;
    let cross: f64 = graph
        .edges()
        .iter()
        .map(|&(i, j)| cross_ratio_expectation(&qs[i], &qs[j], &model.prior))
        .sum();
    Ok(base + cross)
}

/// Correlated variational family on an acyclic graph: the ELBO minus, per
/// edge, the pairwise KL in excess of the two singleton KLs.
pub fn elbo_cvae_corr_acyclic(
    model: &CvaeModel,
    data: &Matrix,
    graph: &Graph,
    noise: &Matrix,
) -> Result<f64> {
    require_acyclic(graph, data)?;
    let base = elbo_vae(model, data, noise)?;
    let mut pair = 0.0;
    for &(i, j) in graph.edges() {
        let q = model.pair_density(data.row(i), data.row(j))?;
        pair += kl_pair(&q, &model.prior) - kl_singleton(q.a()) - kl_singleton(q.b());
    }
    Ok(base - pair)
}

// ---------------------------------------------------------------------------
// Plan-driven engine with gradients

/// How pairwise variational densities are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairMode {
    /// Product of singletons; pairwise bracket reduces to minus the expected
    /// log prior ratio.
    Independent,
    /// Correlations from the pair network.
    Correlated,
}

#[derive(Debug, Clone)]
pub struct SingleTerm {
    pub vertex: usize,
    pub scale: f64,
    pub eps: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TermPlan {
    pub singles: Vec<SingleTerm>,
    /// Edge and multiplier (spanning-tree weight times minibatch scale).
    pub positives: Vec<(Edge, f64)>,
    /// Pair and minibatch scale; the engine applies `γ · 2/n` on top.
    pub negatives: Vec<(Edge, f64)>,
    pub gamma: f64,
    /// Vertex count of the full graph (the `n` in `2/n`).
    pub n: usize,
    pub mode: PairMode,
}

/// Objective value and its parts: `objective = recon − kl_singleton − kl_pair − neg_reg`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Evaluation {
    pub objective: f64,
    pub recon: f64,
    pub kl_singleton: f64,
    pub kl_pair: f64,
    pub neg_reg: f64,
}

impl Evaluation {
    fn finish(mut self) -> Self {
        self.objective = self.recon - self.kl_singleton - self.kl_pair - self.neg_reg;
        self
    }

    fn add(&mut self, o: &Evaluation) {
        self.objective += o.objective;
        self.recon += o.recon;
        self.kl_singleton += o.kl_singleton;
        self.kl_pair += o.kl_pair;
        self.neg_reg += o.neg_reg;
    }

    fn scale(&mut self, s: f64) {
        self.objective *= s;
        self.recon *= s;
        self.kl_singleton *= s;
        self.kl_pair *= s;
        self.neg_reg *= s;
    }
}

struct Encoded {
    mu: Vec<f64>,
    ls: Vec<f64>,
    cache: ForwardCache,
}

struct PairEval {
    rho: Vec<f64>,
    t1: Vec<f64>,
    t2: Vec<f64>,
    c1: ForwardCache,
    c2: ForwardCache,
}

fn pair_forward(net: &Mlp, xi: &[f64], xj: &[f64]) -> Result<PairEval> {
    let (r1, c1) = net.forward(&[xi, xj].concat())?;
    let (r2, c2) = net.forward(&[xj, xi].concat())?;
    let t1: Vec<f64> = r1.iter().map(|v| v.tanh()).collect();
    let t2: Vec<f64> = r2.iter().map(|v| v.tanh()).collect();
    let rho = t1
        .iter()
        .zip(&t2)
        .map(|(a, b)| (0.5 * (a + b)).clamp(-RHO_LIMIT, RHO_LIMIT))
        .collect();
    Ok(PairEval { rho, t1, t2, c1, c2 })
}

fn pair_backward(net: &Mlp, pe: &PairEval, drho: &[f64], grads: &mut MlpGrads) -> Result<()> {
    let d1: Vec<f64> = drho.iter().zip(&pe.t1).map(|(g, t)| 0.5 * g * (1.0 - t * t)).collect();
    let d2: Vec<f64> = drho.iter().zip(&pe.t2).map(|(g, t)| 0.5 * g * (1.0 - t * t)).collect();
    net.backward_into(&pe.c1, &d1, grads)?;
    net.backward_into(&pe.c2, &d2, grads)?;
    Ok(())
}

/// Evaluates a plan and, if `want_grad`, the gradient of the objective.
pub fn evaluate_plan(
    model: &CvaeModel,
    data: &Matrix,
    plan: &TermPlan,
    want_grad: bool,
) -> Result<(Evaluation, Option<ModelGrads>)> {
    let d = model.latent_dim();
    let tau = model.prior.tau();
    let pair_net = match plan.mode {
        PairMode::Correlated => Some(model.pair_net.as_ref().ok_or_else(|| {
            Error::InvalidInput("correlated pair mode needs a pair network".into())
        })?),
        PairMode::Independent => None,
    };
    if plan.mode == PairMode::Independent && !plan.negatives.is_empty() {
        return invalid("negative pair terms need correlated pair mode");
    }

    // encode every vertex touched by the plan
    let mut slot = std::collections::BTreeMap::new();
    let mut order = Vec::new();
    let touched = plan
        .singles
        .iter()
        .map(|s| s.vertex)
        .chain(plan.positives.iter().chain(&plan.negatives).flat_map(|&((i, j), _)| [i, j]));
    for v in touched {
        if v >= data.rows() {
            return invalid(format!("vertex {v} out of range"));
        }
        slot.entry(v).or_insert_with(|| {
            order.push(v);
            order.len() - 1
        });
    }
    let mut enc = Vec::with_capacity(order.len());
    for &v in &order {
        let (out, cache) = model.encoder.forward(data.row(v))?;
        enc.push(Encoded { mu: out[..d].to_vec(), ls: out[d..].to_vec(), cache });
    }
    let mut d_out = vec![vec![0.0; 2 * d]; order.len()];
    let mut grads = model.zero_grads();
    let mut ev = Evaluation::default();
    let singleton_neg = plan.mode == PairMode::Correlated && plan.gamma != 0.0;

    for term in &plan.singles {
        if term.eps.len() != d {
            return invalid("singleton noise must have length d");
        }
        let s = slot[&term.vertex];
        let e = &enc[s];
        let sigma: Vec<f64> = e.ls.iter().map(|l| l.exp()).collect();
        let z: Vec<f64> = (0..d).map(|k| e.mu[k] + sigma[k] * term.eps[k]).collect();
        let (logits, dcache) = model.decoder.forward(&z)?;
        let (ll, dlogits) = log_likelihood_with_grad(model.likelihood, data.row(term.vertex), &logits);
        let mut kl = 0.0;
        let mut kl_grad = vec![0.0; 2 * d];
        for k in 0..d {
            let (v, gm, gl) = kl_singleton_dim(e.mu[k], e.ls[k]);
            kl += v;
            kl_grad[k] = gm;
            kl_grad[d + k] = gl;
        }
        ev.recon += term.scale * ll;
        ev.kl_singleton += term.scale * kl;
        let kl_mult = if singleton_neg {
            ev.neg_reg += term.scale * plan.gamma * kl;
            term.scale * (1.0 + plan.gamma)
        } else {
            term.scale
        };
        if want_grad {
            let up: Vec<f64> = dlogits.iter().map(|g| g * term.scale).collect();
            let dz = model.decoder.backward_into(&dcache, &up, &mut grads.decoder)?;
            let g = &mut d_out[s];
            for k in 0..d {
                g[k] += dz[k] - kl_mult * kl_grad[k];
                g[d + k] += dz[k] * term.eps[k] * sigma[k] - kl_mult * kl_grad[d + k];
            }
        }
    }

    for &((i, j), coef) in &plan.positives {
        let (si, sj) = (slot[&i], slot[&j]);
        let (a, b) = (&enc[si], &enc[sj]);
        match pair_net {
            None => {
                // bracket = −cross ratio
                let mut cross = 0.0;
                for k in 0..d {
                    let t = cross_ratio_dim(a.mu[k], a.ls[k], b.mu[k], b.ls[k], tau);
                    cross += t.value;
                    if want_grad {
                        d_out[si][k] += coef * t.d_mu_a;
                        d_out[si][d + k] += coef * t.d_ls_a;
                        d_out[sj][k] += coef * t.d_mu_b;
                        d_out[sj][d + k] += coef * t.d_ls_b;
                    }
                }
                ev.kl_pair -= coef * cross;
            }
            Some(net) => {
                let pe = pair_forward(net, data.row(i), data.row(j))?;
                let mut bracket = 0.0;
                let mut drho = vec![0.0; d];
                for k in 0..d {
                    let t = kl_pair_dim(a.mu[k], a.ls[k], b.mu[k], b.ls[k], pe.rho[k], tau);
                    let (ka, gma, gla) = kl_singleton_dim(a.mu[k], a.ls[k]);
                    let (kb, gmb, glb) = kl_singleton_dim(b.mu[k], b.ls[k]);
                    bracket += t.value - ka - kb;
                    if want_grad {
                        d_out[si][k] -= coef * (t.d_mu_a - gma);
                        d_out[si][d + k] -= coef * (t.d_ls_a - gla);
                        d_out[sj][k] -= coef * (t.d_mu_b - gmb);
                        d_out[sj][d + k] -= coef * (t.d_ls_b - glb);
                        drho[k] = -coef * t.d_rho;
                    }
                }
                ev.kl_pair += coef * bracket;
                if want_grad {
                    pair_backward(net, &pe, &drho, grads.pair_net.as_mut().expect("pair grads"))?;
                }
            }
        }
    }

    if let Some(net) = pair_net {
        let neg_mult = plan.gamma * 2.0 / plan.n as f64;
        for &((i, j), scale) in &plan.negatives {
            let coef = neg_mult * scale;
            if coef == 0.0 {
                continue;
            }
            let pe = pair_forward(net, data.row(i), data.row(j))?;
            let mut mi = 0.0;
            let mut drho = vec![0.0; d];
            for k in 0..d {
                let (v, g) = mutual_information_dim(pe.rho[k]);
                mi += v;
                drho[k] = -coef * g;
            }
            ev.neg_reg += coef * mi;
            if want_grad {
                pair_backward(net, &pe, &drho, grads.pair_net.as_mut().expect("pair grads"))?;
            }
        }
    }

    if want_grad {
        for (e, g) in enc.iter().zip(&d_out) {
            model.encoder.backward_into(&e.cache, g, &mut grads.encoder)?;
        }
    }
    Ok((ev.finish(), want_grad.then_some(grads)))
}

fn all_pairs(n: usize) -> impl Iterator<Item = Edge> {
    (0..n).flat_map(move |i| ((i + 1)..n).map(move |j| (i, j)))
}

fn full_singles(noise: &Matrix) -> Vec<SingleTerm> {
    (0..noise.rows())
        .map(|i| SingleTerm { vertex: i, scale: 1.0, eps: noise.row(i).to_vec() })
        .collect()
}

fn pair_mode_for(model: &CvaeModel) -> PairMode {
    if model.variant == Variant::CvaeCorr {
        PairMode::Correlated
    } else {
        PairMode::Independent
    }
}

fn weighted_positives(graph: &Graph, weights: &EdgeWeightMap) -> Result<Vec<(Edge, f64)>> {
    graph
        .edges()
        .iter()
        .map(|&(i, j)| {
            weights
                .get(i, j)
                .map(|w| ((i, j), w))
                .ok_or_else(|| Error::InvalidInput(format!("weight map missing edge ({i},{j})")))
        })
        .collect()
}

/// Full-batch plan for the objective a variant trains on.
pub fn full_plan(
    model: &CvaeModel,
    graph: &Graph,
    weights: &EdgeWeightMap,
    gamma: f64,
    noise: &Matrix,
) -> Result<TermPlan> {
    let n = noise.rows();
    if graph.n() != n {
        return invalid("graph vertex count differs from data rows");
    }
    let mode = pair_mode_for(model);
    let (positives, negatives) = match model.variant {
        Variant::Vae => (Vec::new(), Vec::new()),
        Variant::CvaeInd => (weighted_positives(graph, weights)?, Vec::new()),
        Variant::CvaeCorr => {
            let negs = if gamma != 0.0 { all_pairs(n).map(|e| (e, 1.0)).collect() } else { Vec::new() };
            (weighted_positives(graph, weights)?, negs)
        }
    };
    Ok(TermPlan { singles: full_singles(noise), positives, negatives, gamma, n, mode })
}

/// Weighted objective over maximal acyclic subgraphs: singleton terms plus
/// spanning-tree-weighted pairwise brackets. The factorized variants use
/// `ρ = 0` in every pairwise term.
pub fn elbo_cvae_corr_general(
    model: &CvaeModel,
    data: &Matrix,
    graph: &Graph,
    weights: &EdgeWeightMap,
    noise: &Matrix,
) -> Result<f64> {
    model.check_data(data)?;
    model.check_noise(data, noise)?;
    if graph.n() != data.rows() {
        return invalid("graph vertex count differs from data rows");
    }
    let plan = TermPlan {
        singles: full_singles(noise),
        positives: weighted_positives(graph, weights)?,
        negatives: Vec::new(),
        gamma: 0.0,
        n: data.rows(),
        mode: pair_mode_for(model),
    };
    Ok(evaluate_plan(model, data, &plan, false)?.0.objective)
}

/// Weighted objective minus `γ (Σ_i KL_i + (2/n) Σ_{i<j} MI_ij)`.
pub fn loss_cvae_corr_ns(
    model: &CvaeModel,
    data: &Matrix,
    graph: &Graph,
    weights: &EdgeWeightMap,
    gamma: f64,
    noise: &Matrix,
) -> Result<f64> {
    if gamma < 0.0 {
        return invalid("gamma must be non-negative");
    }
    if model.variant != Variant::CvaeCorr {
        return invalid("negative-sampling loss needs the cvae_corr variant");
    }
    model.check_data(data)?;
    model.check_noise(data, noise)?;
    let plan = full_plan(model, graph, weights, gamma, noise)?;
    Ok(evaluate_plan(model, data, &plan, false)?.0.objective)
}

/// Counter-example for cyclic graphs: the acyclic factorized objective applied
/// unchanged to `K₄` with 1-D latents, all means equal to `mu`, decoder
/// independent of `z` (its constant reconstruction term omitted).
pub fn naive_loss_k4(mu: f64, tau: f64, sigma: &[f64; 4]) -> f64 {
    let one_t = 1.0 - tau * tau;
    let singles: f64 = sigma
        .iter()
        .map(|s| mu * mu - (1.0 + 2.0 * tau * tau) * s * s / (2.0 * one_t) + s.ln())
        .sum();
    let pairs = 6.0 * (2.0 * mu * mu - 2.0 * tau * mu * mu);
    singles - pairs / (2.0 * one_t)
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lr: f64,
    pub epochs: usize,
    pub b1_singleton: usize,
    pub b2_pairwise: usize,
    pub seed: u64,
    pub hidden_dim: usize,
    /// Constant `C` in the guard `γ ≤ C·|V|·(|V| − |CC|)/|E|`.
    pub gamma_guard_c: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            lr: 1e-3,
            epochs: 100,
            b1_singleton: 64,
            b2_pairwise: 256,
            seed: 0,
            hidden_dim: 128,
            gamma_guard_c: 4.0,
        }
    }
}

impl TrainConfig {
    /// Largest γ for which the negative terms should not swamp the positive ones.
    pub fn gamma_bound(&self, graph: &Graph) -> Option<f64> {
        if graph.num_edges() == 0 {
            return None;
        }
        let n = graph.n() as f64;
        let cc = graph.connected_components().len() as f64;
        Some(self.gamma_guard_c * n * (n - cc) / graph.num_edges() as f64)
    }

    pub fn gamma_warning(&self, graph: &Graph) -> Option<String> {
        let bound = self.gamma_bound(graph)?;
        (self.gamma > bound).then(|| {
            format!(
                "gamma {} exceeds guard {:.4} = C·|V|·(|V|−|CC|)/|E| with C = {}; \
                 negative samples may dominate",
                self.gamma, bound, self.gamma_guard_c
            )
        })
    }
}

/// Indices drawn for one stochastic step.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub vertices: Vec<usize>,
    /// Indices into the graph's sorted edge list.
    pub edges: Vec<usize>,
    pub negatives: Vec<Edge>,
}

/// Unordered pair with linear index `t` in the row-major upper triangle of `n`.
pub fn pair_from_index(n: usize, t: usize) -> Edge {
    let offset = |i: usize| i * n - i * (i + 1) / 2;
    let (mut lo, mut hi) = (0usize, n - 1);
    while lo + 1 < hi {
        let mid = (lo + hi) / 2;
        if offset(mid) <= t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, lo + 1 + (t - offset(lo)))
}

impl Batch {
    /// Draws vertices, positive edges and negative pairs uniformly without
    /// replacement (each group capped at its population size).
    pub fn sample(
        n: usize,
        num_edges: usize,
        variant: Variant,
        gamma: f64,
        b1: usize,
        b2: usize,
        rng: &mut Rng,
    ) -> Self {
        let pick = |rng: &mut Rng, pop: usize, k: usize| -> Vec<usize> {
            let mut v = index::sample(rng, pop, k.min(pop)).into_vec();
            v.sort_unstable();
            v
        };
        let vertices = pick(rng, n, b1);
        let edges = if variant == Variant::Vae { Vec::new() } else { pick(rng, num_edges, b2) };
        let negatives = if variant == Variant::CvaeCorr && gamma != 0.0 && n >= 2 {
            pick(rng, n * (n - 1) / 2, b2).into_iter().map(|t| pair_from_index(n, t)).collect()
        } else {
            Vec::new()
        };
        Self { vertices, edges, negatives }
    }

    /// Plan with each group rescaled to be unbiased for the full objective.
    /// `noise[k]` is the reconstruction noise for `vertices[k]`.
    pub fn plan(
        &self,
        model: &CvaeModel,
        graph: &Graph,
        weights: &EdgeWeightMap,
        gamma: f64,
        noise: Vec<Vec<f64>>,
    ) -> TermPlan {
        let n = graph.n();
        let s1 = n as f64 / self.vertices.len().max(1) as f64;
        let s2 = graph.num_edges() as f64 / self.edges.len().max(1) as f64;
        let s3 = (n * n.saturating_sub(1) / 2) as f64 / self.negatives.len().max(1) as f64;
        TermPlan {
            singles: self
                .vertices
                .iter()
                .zip(noise)
                .map(|(&v, eps)| SingleTerm { vertex: v, scale: s1, eps })
                .collect(),
            positives: self
                .edges
                .iter()
                .map(|&k| (graph.edges()[k], s2 * weights.weights()[k]))
                .collect(),
            negatives: self.negatives.iter().map(|&e| (e, s3)).collect(),
            gamma: if model.variant == Variant::CvaeCorr { gamma } else { 0.0 },
            n,
            mode: pair_mode_for(model),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub epoch: usize,
    #[serde(flatten)]
    pub eval: Evaluation,
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut s = String::from("epoch,objective,recon,kl_singleton,kl_pair,neg_reg\n");
    for r in rows {
        let e = r.eval;
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, e.objective, e.recon, e.kl_singleton, e.kl_pair, e.neg_reg
        ));
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CvaeModel,
    /// Row 0 is the full-batch objective at initialization; row `e ≥ 1` is
    /// the mean minibatch estimate over epoch `e`.
    pub trace: Vec<TraceRow>,
    pub initial: Evaluation,
    pub final_eval: Evaluation,
    pub weights: EdgeWeightMap,
    pub warnings: Vec<String>,
}

/// Full objective of a variant on fixed evaluation noise drawn from `seed`.
pub fn full_objective(
    model: &CvaeModel,
    data: &Matrix,
    graph: &Graph,
    weights: &EdgeWeightMap,
    gamma: f64,
    seed: u64,
) -> Result<Evaluation> {
    let mut rng = substream(seed, "eval-noise");
    let noise = Matrix::from_vec(
        data.rows(),
        model.latent_dim(),
        standard_normals(&mut rng, data.rows() * model.latent_dim()),
    )?;
    let plan = full_plan(model, graph, weights, gamma, &noise)?;
    Ok(evaluate_plan(model, data, &plan, false)?.0)
}

fn apply_adam(model: &mut CvaeModel, adam: &mut AdamState, grads: &ModelGrads) -> Result<()> {
    // descent on the negated objective
    let mut neg = grads.clone();
    neg.encoder.scale(-1.0);
    neg.decoder.scale(-1.0);
    if let Some(p) = &mut neg.pair_net {
        p.scale(-1.0);
    }
    let mut g_blocks: Vec<&[f64]> = neg.encoder.blocks().to_vec();
    if let Some(p) = &neg.pair_net {
        g_blocks.extend(p.blocks());
    }
    g_blocks.extend(neg.decoder.blocks());

    let mut p_blocks: Vec<&mut [f64]> = model.encoder.blocks_mut().into_iter().collect();
    if let Some(p) = &mut model.pair_net {
        p_blocks.extend(p.blocks_mut());
    }
    p_blocks.extend(model.decoder.blocks_mut());
    adam.step(&mut p_blocks, &g_blocks)
}

fn block_sizes(model: &CvaeModel) -> Vec<usize> {
    model
        .nets()
        .iter()
        .flat_map(|(_, n)| n.blocks().map(<[f64]>::len))
        .collect()
}

/// Stochastic gradient ascent with Adam. Each epoch runs `⌈n / B₁⌉` steps;
/// every step samples `B₁` vertices, `B₂` positive edges and (for
/// `cvae_corr` with `γ > 0`) `B₂` negative pairs with fresh noise.
pub fn train(
    model: &CvaeModel,
    data: &Matrix,
    graph: &Graph,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    model.check_data(data)?;
    if graph.n() != data.rows() {
        return invalid(format!(
            "graph has {} vertices but data has {} rows",
            graph.n(),
            data.rows()
        ));
    }
    if config.b1_singleton == 0 || config.b2_pairwise == 0 {
        return invalid("batch sizes must be positive");
    }
    if config.gamma < 0.0 {
        return invalid("gamma must be non-negative");
    }
    let n = data.rows();
    let d = model.latent_dim();
    let weights = mas_edge_weights(graph)?;
    let gamma = if model.variant == Variant::CvaeCorr { config.gamma } else { 0.0 };
    let mut warnings = Vec::new();
    if model.variant == Variant::CvaeCorr {
        if let Some(w) = config.gamma_warning(graph) {
            log::warn!("{w}");
            warnings.push(w);
        }
    }

    let mut model = model.clone();
    let initial = full_objective(&model, data, graph, &weights, gamma, config.seed)?;
    let mut trace = vec![TraceRow { epoch: 0, eval: initial }];
    let mut adam = AdamState::new(&block_sizes(&model), config.lr);
    let mut batch_rng = substream(config.seed, "batching");
    let mut noise_rng = substream(config.seed, "noise");
    let steps_per_epoch = n.div_ceil(config.b1_singleton).max(1);

    for epoch in 1..=config.epochs {
        let mut acc = Evaluation::default();
        for _ in 0..steps_per_epoch {
            let batch = Batch::sample(
                n,
                graph.num_edges(),
                model.variant,
                gamma,
                config.b1_singleton,
                config.b2_pairwise,
                &mut batch_rng,
            );
            let noise = batch.vertices.iter().map(|_| standard_normals(&mut noise_rng, d)).collect();
            let plan = batch.plan(&model, graph, &weights, gamma, noise);
            let (ev, grads) = evaluate_plan(&model, data, &plan, true)?;
            acc.add(&ev);
            apply_adam(&mut model, &mut adam, grads.as_ref().expect("gradient requested"))?;
        }
        acc.scale(1.0 / steps_per_epoch as f64);
        trace.push(TraceRow { epoch, eval: acc });
    }
    let final_eval = full_objective(&model, data, graph, &weights, gamma, config.seed)?;
    Ok(TrainOutcome { model, trace, initial, final_eval, weights, warnings })
}
