//! Closed forms for diagonal and per-dimension bivariate Gaussians against the
//! standard-normal singleton prior and the correlated pairwise prior
//! `N(0, [[I, τI], [τI, I]])`.
//!
//! Every pairwise quantity factorizes over latent dimensions, so the `*_dim`
//! helpers work on one coordinate and also return partial derivatives with
//! respect to `(μ_a, log σ_a, μ_b, log σ_b, ρ)`. The model's objectives are
//! assembled from these.

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != sigma.len() {
            return invalid("mu and sigma lengths differ");
        }
        if sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return invalid("sigma must be positive and finite");
        }
        if mu.iter().any(|m| !m.is_finite()) {
            return invalid("mu must be finite");
        }
        Ok(Self { mu, sigma })
    }

    pub fn from_log_sigma(mu: Vec<f64>, log_sigma: &[f64]) -> Result<Self> {
        Self::new(mu, log_sigma.iter().map(|s| s.exp()).collect())
    }

    pub fn standard(d: usize) -> Self {
        Self { mu: vec![0.0; d], sigma: vec![1.0; d] }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }
}

/// Product over dimensions of bivariate normals whose marginals are `a` and `b`
/// and whose per-dimension correlation is `rho[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGaussian {
    a: DiagGaussian,
    b: DiagGaussian,
    rho: Vec<f64>,
}

impl PairGaussian {
    pub fn new(a: DiagGaussian, b: DiagGaussian, rho: Vec<f64>) -> Result<Self> {
        if a.dim() != b.dim() || rho.len() != a.dim() {
            return invalid("pair gaussian dimension mismatch");
        }
        if rho.iter().any(|r| !(r.abs() < 1.0)) {
            return invalid("correlations must lie strictly inside (-1, 1)");
        }
        Ok(Self { a, b, rho })
    }

    pub fn independent(a: DiagGaussian, b: DiagGaussian) -> Result<Self> {
        let d = a.dim();
        Self::new(a, b, vec![0.0; d])
    }

    pub fn a(&self) -> &DiagGaussian {
        &self.a
    }

    pub fn b(&self) -> &DiagGaussian {
        &self.b
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    /// Per-dimension cross-covariance `ρ σ_a σ_b`.
    pub fn cross_covariance(&self) -> Vec<f64> {
        (0..self.rho.len())
            .map(|k| self.rho[k] * self.a.sigma[k] * self.b.sigma[k])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorConfig {
    tau: f64,
    d: usize,
}

impl PriorConfig {
    pub const DEFAULT_TAU: f64 = 0.99;

    pub fn new(tau: f64, d: usize) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return invalid(format!("tau must lie in (0, 1), got {tau}"));
        }
        if d == 0 {
            return invalid("latent dimension must be positive");
        }
        Ok(Self { tau, d })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn d(&self) -> usize {
        self.d
    }
}

/// Value and partials with respect to `(μ_a, log σ_a, μ_b, log σ_b, ρ)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DimTerm {
    pub value: f64,
    pub d_mu_a: f64,
    pub d_ls_a: f64,
    pub d_mu_b: f64,
    pub d_ls_b: f64,
    pub d_rho: f64,
}

/// One coordinate of `KL(N(μ, σ²) || N(0, 1))`, with partials `(∂μ, ∂log σ)`.
#[inline]
pub fn kl_singleton_dim(mu: f64, log_sigma: f64) -> (f64, f64, f64) {
    let var = (2.0 * log_sigma).exp();
    (0.5 * (var + mu * mu - 1.0 - 2.0 * log_sigma), mu, var - 1.0)
}

/// One coordinate of the bivariate KL against `N(0, [[1, τ], [τ, 1]])`.
#[inline]
pub fn kl_pair_dim(mu_a: f64, ls_a: f64, mu_b: f64, ls_b: f64, rho: f64, tau: f64) -> DimTerm {
    let (sa, sb) = (ls_a.exp(), ls_b.exp());
    let (va, vb) = (sa * sa, sb * sb);
    let one_t = 1.0 - tau * tau;
    let one_r = 1.0 - rho * rho;
    let cross = tau * rho * sa * sb;
    let trace = (va + vb - 2.0 * cross) / one_t;
    let quad = (mu_a * mu_a + mu_b * mu_b - 2.0 * tau * mu_a * mu_b) / one_t;
    let value = 0.5 * (trace + quad - 2.0 + one_t.ln() - 2.0 * ls_a - 2.0 * ls_b - one_r.ln());
    DimTerm {
        value,
        d_mu_a: (mu_a - tau * mu_b) / one_t,
        d_mu_b: (mu_b - tau * mu_a) / one_t,
        d_ls_a: (va - cross) / one_t - 1.0,
        d_ls_b: (vb - cross) / one_t - 1.0,
        d_rho: -tau * sa * sb / one_t + rho / one_r,
    }
}

/// One coordinate of `E_{q_a q_b} log[p₀(z_a, z_b) / (p₀(z_a) p₀(z_b))]`.
#[inline]
pub fn cross_ratio_dim(mu_a: f64, ls_a: f64, mu_b: f64, ls_b: f64, tau: f64) -> DimTerm {
    let (va, vb) = ((2.0 * ls_a).exp(), (2.0 * ls_b).exp());
    let one_t = 1.0 - tau * tau;
    let (m2a, m2b) = (mu_a * mu_a + va, mu_b * mu_b + vb);
    let value = -0.5 * one_t.ln() - (m2a + m2b - 2.0 * tau * mu_a * mu_b) / (2.0 * one_t)
        + 0.5 * (m2a + m2b);
    DimTerm {
        value,
        d_mu_a: -(mu_a - tau * mu_b) / one_t + mu_a,
        d_mu_b: -(mu_b - tau * mu_a) / one_t + mu_b,
        d_ls_a: va * (1.0 - 1.0 / one_t),
        d_ls_b: vb * (1.0 - 1.0 / one_t),
        d_rho: 0.0,
    }
}

/// One coordinate of the mutual information of a bivariate normal, with `∂ρ`.
#[inline]
pub fn mutual_information_dim(rho: f64) -> (f64, f64) {
    let one_r = 1.0 - rho * rho;
    (-0.5 * one_r.ln(), rho / one_r)
}

/// `KL(q || N(0, I))`.
pub fn kl_singleton(q: &DiagGaussian) -> f64 {
    q.mu
        .iter()
        .zip(&q.sigma)
        .map(|(m, s)| kl_singleton_dim(*m, s.ln()).0)
        .sum()
}

/// `KL(q(z_a, z_b) || p₀(z_a, z_b))`, summed over dimensions.
pub fn kl_pair(q: &PairGaussian, prior: &PriorConfig) -> f64 {
    (0..q.rho.len())
        .map(|k| {
            kl_pair_dim(
                q.a.mu[k],
                q.a.sigma[k].ln(),
                q.b.mu[k],
                q.b.sigma[k].ln(),
                q.rho[k],
                prior.tau,
            )
            .value
        })
        .sum()
}

/// `E_q log[q(z_a, z_b) / (q(z_a) q(z_b))] = −½ Σ ln(1 − ρ²)`.
pub fn mutual_information(q: &PairGaussian) -> f64 {
    q.rho.iter().map(|&r| mutual_information_dim(r).0).sum()
}

pub fn cross_ratio_expectation(a: &DiagGaussian, b: &DiagGaussian, prior: &PriorConfig) -> f64 {
    assert_eq!(a.dim(), b.dim(), "dimension mismatch");
    (0..a.dim())
        .map(|k| {
            cross_ratio_dim(a.mu[k], a.sigma[k].ln(), b.mu[k], b.sigma[k].ln(), prior.tau).value
        })
        .sum()
}

/// `E‖z_a − z_b‖²` with optional per-dimension correlation (absent = independent).
pub fn expected_sq_distance(a: &DiagGaussian, b: &DiagGaussian, rho: Option<&[f64]>) -> f64 {
    assert_eq!(a.dim(), b.dim(), "dimension mismatch");
    (0..a.dim())
        .map(|k| {
            let dm = a.mu[k] - b.mu[k];
            let r = rho.map_or(0.0, |r| r[k]);
            dm * dm + a.sigma[k] * a.sigma[k] + b.sigma[k] * b.sigma[k]
                - 2.0 * r * a.sigma[k] * b.sigma[k]
        })
        .sum()
}

/// Reparameterized draw `μ + σ ⊙ ε`.
pub fn sample(q: &DiagGaussian, eps: &[f64]) -> Vec<f64> {
    assert_eq!(eps.len(), q.dim(), "noise length mismatch");
    (0..q.dim()).map(|k| q.mu[k] + q.sigma[k] * eps[k]).collect()
}

/// Reparameterized joint draw. `eps` holds `2d` standard normals: the first `d`
/// drive `z_a`, the second `d` the independent part of `z_b`.
pub fn sample_pair(q: &PairGaussian, eps: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = q.rho.len();
    assert_eq!(eps.len(), 2 * d, "noise length mismatch");
    let (e1, e2) = eps.split_at(d);
    let za = sample(&q.a, e1);
    let zb = (0..d)
        .map(|k| {
            let r = q.rho[k];
            q.b.mu[k] + q.b.sigma[k] * (r * e1[k] + (1.0 - r * r).sqrt() * e2[k])
        })
        .collect();
    (za, zb)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dg(mu: &[f64], sigma: &[f64]) -> DiagGaussian {
        DiagGaussian::new(mu.to_vec(), sigma.to_vec()).unwrap()
    }

    #[test]
    fn validation() {
        assert!(DiagGaussian::new(vec![0.0], vec![0.0]).is_err());
        assert!(DiagGaussian::new(vec![0.0, 1.0], vec![1.0]).is_err());
        let a = DiagGaussian::standard(2);
        assert!(PairGaussian::new(a.clone(), a.clone(), vec![1.0, 0.0]).is_err());
        assert!(PairGaussian::new(a.clone(), a, vec![0.1]).is_err());
        assert!(PriorConfig::new(1.0, 2).is_err());
        assert!(PriorConfig::new(0.0, 2).is_err());
        assert!(PriorConfig::new(0.5, 0).is_err());
    }

    #[test]
    fn singleton_kl_values() {
        assert_eq!(kl_singleton(&DiagGaussian::standard(4)), 0.0);
        assert!((kl_singleton(&dg(&[2.0, 0.0], &[1.0, 1.0])) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn pair_kl_zero_at_prior() {
        let p = PriorConfig::new(0.99, 3).unwrap();
        let s = DiagGaussian::standard(3);
        let q = PairGaussian::new(s.clone(), s, vec![0.99; 3]).unwrap();
        assert!(kl_pair(&q, &p).abs() < 1e-12);
    }

    #[test]
    fn pair_kl_independent_standard_normals() {
        for tau in [0.1, 0.5, 0.99] {
            let p = PriorConfig::new(tau, 1).unwrap();
            let q = PairGaussian::independent(DiagGaussian::standard(1), DiagGaussian::standard(1))
                .unwrap();
            let one_t: f64 = 1.0 - tau * tau;
            let expected = 0.5 * (2.0 / one_t - 2.0 + one_t.ln());
            assert!((kl_pair(&q, &p) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn pair_kl_reduces_to_singletons_as_tau_vanishes() {
        let p = PriorConfig::new(1e-12, 2).unwrap();
        let a = dg(&[0.3, -1.0], &[0.7, 1.3]);
        let b = dg(&[1.1, 0.2], &[0.4, 2.0]);
        let q = PairGaussian::independent(a.clone(), b.clone()).unwrap();
        let sum = kl_singleton(&a) + kl_singleton(&b);
        assert!((kl_pair(&q, &p) - sum).abs() < 1e-10);
        assert!(cross_ratio_expectation(&DiagGaussian::standard(2), &DiagGaussian::standard(2), &p)
            .abs()
            < 1e-10);
    }

    #[test]
    fn cross_ratio_identity() {
        let p = PriorConfig::new(0.8, 2).unwrap();
        let a = dg(&[0.3, -1.0], &[0.7, 1.3]);
        let b = dg(&[1.1, 0.2], &[0.4, 2.0]);
        let q = PairGaussian::independent(a.clone(), b.clone()).unwrap();
        let lhs = kl_pair(&q, &p) - kl_singleton(&a) - kl_singleton(&b);
        assert!((lhs + cross_ratio_expectation(&a, &b, &p)).abs() < 1e-10);
    }

    #[test]
    fn mutual_information_values() {
        let s = DiagGaussian::standard(1);
        let q = PairGaussian::new(s.clone(), s.clone(), vec![0.0]).unwrap();
        assert_eq!(mutual_information(&q), 0.0);
        let q = PairGaussian::new(s.clone(), s, vec![0.99]).unwrap();
        assert!((mutual_information(&q) + 0.5 * (1.0f64 - 0.9801).ln()).abs() < 1e-12);
        let q2 = PairGaussian::new(dg(&[5.0], &[0.1]), dg(&[-3.0], &[7.0]), vec![0.99]).unwrap();
        assert_eq!(mutual_information(&q), mutual_information(&q2));
    }

    #[test]
    fn expected_distance_values() {
        let s = DiagGaussian::standard(5);
        assert_eq!(expected_sq_distance(&s, &s, None), 10.0);
        let tiny = dg(&[1.0, 2.0], &[1e-9, 1e-9]);
        assert!(expected_sq_distance(&tiny, &tiny, None) < 1e-15);
        let r = [0.5, 0.5];
        let a = dg(&[0.0, 1.0], &[1.0, 2.0]);
        let b = dg(&[1.0, 1.0], &[1.0, 2.0]);
        assert!((expected_sq_distance(&a, &b, Some(&r)) - (1.0 + 1.0 + 4.0)).abs() < 1e-12);
    }

    #[test]
    fn sampling() {
        let q = dg(&[1.0, -2.0], &[0.5, 3.0]);
        assert_eq!(sample(&q, &[0.0, 0.0]), vec![1.0, -2.0]);
        let s = DiagGaussian::standard(2);
        assert_eq!(sample(&s, &[0.3, -0.4]), vec![0.3, -0.4]);
        let pq = PairGaussian::independent(q.clone(), s.clone()).unwrap();
        let eps = [0.1, 0.2, 0.3, 0.4];
        let (za, zb) = sample_pair(&pq, &eps);
        assert_eq!(za, sample(&q, &eps[..2]));
        assert_eq!(zb, sample(&s, &eps[2..]));
        let pq = PairGaussian::new(q.clone(), s.clone(), vec![0.4, -0.7]).unwrap();
        let (za, zb) = sample_pair(&pq, &[0.0; 4]);
        assert_eq!(za, q.mu().to_vec());
        assert_eq!(zb, s.mu().to_vec());
    }

    fn fd(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn dim_partials_match_finite_differences() {
        let (ma, la, mb, lb, r, t) = (0.4, -0.3, -1.2, 0.25, 0.6, 0.9);
        let g = kl_pair_dim(ma, la, mb, lb, r, t);
        let close = |a: f64, b: f64| assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        close(g.d_mu_a, fd(|x| kl_pair_dim(x, la, mb, lb, r, t).value, ma));
        close(g.d_ls_a, fd(|x| kl_pair_dim(ma, x, mb, lb, r, t).value, la));
        close(g.d_mu_b, fd(|x| kl_pair_dim(ma, la, x, lb, r, t).value, mb));
        close(g.d_ls_b, fd(|x| kl_pair_dim(ma, la, mb, x, r, t).value, lb));
        close(g.d_rho, fd(|x| kl_pair_dim(ma, la, mb, lb, x, t).value, r));

        let c = cross_ratio_dim(ma, la, mb, lb, t);
        close(c.d_mu_a, fd(|x| cross_ratio_dim(x, la, mb, lb, t).value, ma));
        close(c.d_ls_a, fd(|x| cross_ratio_dim(ma, x, mb, lb, t).value, la));
        close(c.d_mu_b, fd(|x| cross_ratio_dim(ma, la, x, lb, t).value, mb));
        close(c.d_ls_b, fd(|x| cross_ratio_dim(ma, la, mb, x, t).value, lb));

        let (_, dm, dl) = kl_singleton_dim(ma, la);
        close(dm, fd(|x| kl_singleton_dim(x, la).0, ma));
        close(dl, fd(|x| kl_singleton_dim(ma, x).0, la));
        close(mutual_information_dim(r).1, fd(|x| mutual_information_dim(x).0, r));
    }
}
