//! Closed-form 2-Wasserstein distances between diagonal Gaussians and the
//! analytic gradients the training loss needs.
//!
//! For diagonal covariances the matrix square roots commute and become
//! elementwise, so the general closed form reduces to
//!
//! ```text
//! W2(P, Q) = sqrt( ||mu_P - mu_Q||^2 + sum_k (sqrt(a_k) - sqrt(b_k))^2 )
//! ```
//!
//! and against a unit-covariance component with mean `m` this is
//!
//! ```text
//! W2 = sqrt( ||mu - m||^2 + sum_k (sqrt(s_k) - 1)^2 )
//! ```
//!
//! All distance math is carried out in `f64` regardless of how the model
//! stores its parameters; the gradient-check tolerances depend on it.

use crate::error::{Error, Result};

/// A per-sample latent distribution `N(mu, diag(s))` emitted by the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianEmbedding {
    pub mu: Vec<f64>,
    /// Diagonal of the covariance; strictly positive.
    pub s: Vec<f64>,
}

impl GaussianEmbedding {
    pub fn new(mu: Vec<f64>, s: Vec<f64>) -> Result<Self> {
        if mu.len() != s.len() {
            return Err(Error::Dimension(format!(
                "mean has {} entries but variance diagonal has {}",
                mu.len(),
                s.len()
            )));
        }
        check_positive(&s)?;
        Ok(Self { mu, s })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// A Gaussian with an explicit diagonal covariance. Dense covariances are out
/// of scope; anything that would need a matrix square root is rejected by
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FullGaussian {
    pub mu: Vec<f64>,
    pub cov_diag: Vec<f64>,
}

impl FullGaussian {
    pub fn new(mu: Vec<f64>, cov_diag: Vec<f64>) -> Result<Self> {
        if mu.len() != cov_diag.len() {
            return Err(Error::Dimension(format!(
                "mean has {} entries but covariance diagonal has {}",
                mu.len(),
                cov_diag.len()
            )));
        }
        check_positive(&cov_diag)?;
        Ok(Self { mu, cov_diag })
    }
}

fn check_positive(v: &[f64]) -> Result<()> {
    match v.iter().find(|&&x| !(x > 0.0)) {
        Some(&x) => Err(Error::Domain(format!("variance must be positive, got {x}"))),
        None => Ok(()),
    }
}

/// Exact 2-Wasserstein distance between two diagonal Gaussians.
pub fn w2_full(p: &FullGaussian, q: &FullGaussian) -> Result<f64> {
    if p.mu.len() != q.mu.len() {
        return Err(Error::Dimension(format!(
            "distributions have dims {} and {}",
            p.mu.len(),
            q.mu.len()
        )));
    }
    let mean_sq: f64 = p.mu.iter().zip(&q.mu).map(|(a, b)| (a - b) * (a - b)).sum();
    let cov_sq: f64 = p
        .cov_diag
        .iter()
        .zip(&q.cov_diag)
        .map(|(a, b)| {
            let d = a.sqrt() - b.sqrt();
            d * d
        })
        .sum();
    Ok((mean_sq + cov_sq).sqrt())
}

/// 2-Wasserstein distance from an encoder embedding to a unit-covariance
/// component with mean `m`. Equal to [`w2_full`] against `N(m, I)`.
pub fn w2_diag_identity(emb: &GaussianEmbedding, m: &[f64]) -> Result<f64> {
    if emb.dim() != m.len() {
        return Err(Error::Dimension(format!(
            "embedding has dim {} but component mean has dim {}",
            emb.dim(),
            m.len()
        )));
    }
    check_positive(&emb.s)?;
    let mean_sq: f64 = emb.mu.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
    let cov_sq: f64 = emb
        .s
        .iter()
        .map(|&s| {
            let d = s.sqrt() - 1.0;
            d * d
        })
        .sum();
    Ok((mean_sq + cov_sq).sqrt())
}

/// Analytic gradient of [`w2_diag_identity`] with respect to `mu` and `s`.
///
/// With `W = max(distance, floor)`:
///
/// ```text
/// dW/dmu_k = (mu_k - m_k) / W
/// dW/ds_k  = (sqrt(s_k) - 1) / (2 * sqrt(s_k) * W)
/// ```
///
/// Below `floor` the denominator is pinned at `floor`, giving a bounded
/// subgradient at the (non-differentiable) minimum.
pub fn w2_grad(
    emb: &GaussianEmbedding,
    m: &[f64],
    floor: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(floor > 0.0) {
        return Err(Error::Domain(format!("floor must be positive, got {floor}")));
    }
    let w = w2_diag_identity(emb, m)?.max(floor);
    let grad_mu = emb.mu.iter().zip(m).map(|(a, b)| (a - b) / w).collect();
    let grad_s = emb
        .s
        .iter()
        .map(|&s| {
            let r = s.sqrt();
            (r - 1.0) / (2.0 * r * w)
        })
        .collect();
    Ok((grad_mu, grad_s))
}
