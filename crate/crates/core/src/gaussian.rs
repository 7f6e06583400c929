//! Diagonal Gaussians over the latent space: reparameterized sampling,
//! log-density, and closed-form KL divergence.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.8378770664093453;

/// Floor added to softplus-constrained standard deviations.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Diagonal Gaussian with graph-connected mean and standard deviation
/// vectors, so losses built from it are differentiable w.r.t. the network
/// heads that produced them.
#[derive(Clone)]
pub struct DiagonalGaussian {
    pub mu: Tensor,
    pub sigma: Tensor,
}

impl DiagonalGaussian {
    /// From explicit `mu` and strictly positive `sigma`.
    pub fn new(mu: Tensor, sigma: Tensor) -> Result<Self> {
        if mu.shape() != sigma.shape() || mu.shape().len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "gaussian",
                detail: format!("mu {:?} vs sigma {:?}", mu.shape(), sigma.shape()),
            });
        }
        if sigma.data().iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidParameter("sigma must be strictly positive".into()));
        }
        Ok(DiagonalGaussian { mu, sigma })
    }

    /// From a raw head output: `sigma = softplus(raw) + 1e-6`.
    pub fn from_raw(mu: Tensor, sigma_raw: Tensor) -> Result<Self> {
        let sigma = sigma_raw.softplus()?.add_scalar(SIGMA_FLOOR)?;
        DiagonalGaussian::new(mu, sigma)
    }

    pub fn len(&self) -> usize {
        self.mu.numel()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `z0 = mu + sigma * noise`, differentiable w.r.t. `mu` and `sigma`.
    pub fn sample_reparameterized(&self, noise: &[f64]) -> Result<Tensor> {
        if noise.len() != self.len() {
            return Err(Error::ShapeMismatch {
                op: "sample_reparameterized",
                detail: format!("noise length {} vs latent dim {}", noise.len(), self.len()),
            });
        }
        let eps = Tensor::constant(&[noise.len()], noise.to_vec())?;
        self.mu.add(&self.sigma.mul(&eps)?)
    }

    /// `sum_i [ -1/2 log(2 pi) - log sigma_i - (z_i - mu_i)^2 / (2 sigma_i^2) ]`
    pub fn log_prob(&self, z: &Tensor) -> Result<Tensor> {
        if z.shape() != self.mu.shape() {
            return Err(Error::ShapeMismatch {
                op: "log_prob",
                detail: format!("z {:?} vs latent {:?}", z.shape(), self.mu.shape()),
            });
        }
        let n = self.len() as f64;
        let standardized = z.sub(&self.mu)?.div(&self.sigma)?;
        let quad = standardized.square()?.sum()?.mul_scalar(0.5)?;
        let log_sigma = self.sigma.log()?.sum()?;
        Tensor::scalar(-0.5 * n * LN_2PI)
            .sub(&log_sigma)?
            .sub(&quad)
    }
}

/// Closed-form `KL(q || p)` between diagonal Gaussians:
/// `sum_i [ log(p.sigma_i / q.sigma_i)
///          + (q.sigma_i^2 + (q.mu_i - p.mu_i)^2) / (2 p.sigma_i^2) - 1/2 ]`
pub fn kl_diag_gaussians(q: &DiagonalGaussian, p: &DiagonalGaussian) -> Result<Tensor> {
    if q.len() != p.len() {
        return Err(Error::ShapeMismatch {
            op: "kl_diag_gaussians",
            detail: format!("q dim {} vs p dim {}", q.len(), p.len()),
        });
    }
    let n = q.len() as f64;
    let log_ratio = p.sigma.log()?.sub(&q.sigma.log()?)?.sum()?;
    let var_q = q.sigma.square()?;
    let mean_diff = q.mu.sub(&p.mu)?.square()?;
    let var_p2 = p.sigma.square()?.mul_scalar(2.0)?;
    let quad = var_q.add(&mean_diff)?.div(&var_p2)?.sum()?;
    log_ratio.add(&quad)?.add_scalar(-0.5 * n)
}
