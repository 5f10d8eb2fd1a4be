//! Closed-form predictions for mean-pooled cosine under the isotropic-noise
//! anisotropy model `h = mu + sigma * eps`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shared-direction norm, per-coordinate noise scale and hidden dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnisotropyParams {
    mu_norm: f64,
    sigma: f64,
    dim: usize,
}

impl AnisotropyParams {
    pub fn new(mu_norm: f64, sigma: f64, dim: usize) -> Result<Self> {
        if !(mu_norm.is_finite() && mu_norm > 0.0) {
            return Err(Error::InvalidInput(format!("mu_norm must be > 0, got {mu_norm}")));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::InvalidInput(format!("sigma must be >= 0, got {sigma}")));
        }
        if dim == 0 {
            return Err(Error::InvalidInput("dim must be >= 1".into()));
        }
        Ok(Self { mu_norm, sigma, dim })
    }

    pub fn mu_norm(&self) -> f64 {
        self.mu_norm
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthPair {
    pub m: usize,
    pub n: usize,
}

impl LengthPair {
    pub fn new(m: usize, n: usize) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::InvalidInput(format!(
                "sequence lengths must be >= 1, got ({m}, {n})"
            )));
        }
        Ok(Self { m, n })
    }
}

/// `rho = sigma² d / ||mu||²`, noise energy over shared-direction energy.
pub fn anisotropy_ratio(p: &AnisotropyParams) -> f64 {
    p.sigma * p.sigma * p.dim as f64 / (p.mu_norm * p.mu_norm)
}

pub fn expected_cosine(p: &AnisotropyParams, len: LengthPair) -> f64 {
    expected_cosine_rho(anisotropy_ratio(p), len)
}

/// `1 / (sqrt(1 + rho/m) sqrt(1 + rho/n))`.
pub fn expected_cosine_rho(rho: f64, len: LengthPair) -> f64 {
    let (m, n) = (len.m as f64, len.n as f64);
    1.0 / ((1.0 + rho / m).sqrt() * (1.0 + rho / n).sqrt())
}

pub fn taylor_cosine(p: &AnisotropyParams, len: LengthPair) -> f64 {
    taylor_cosine_rho(anisotropy_ratio(p), len)
}

/// First-order expansion `1 - (rho/2)(1/m + 1/n)`; only meaningful while
/// `rho (1/m + 1/n)` is small.
pub fn taylor_cosine_rho(rho: f64, len: LengthPair) -> f64 {
    1.0 - 0.5 * rho * expansion_argument(1.0, len)
}

/// `rho (1/m + 1/n)`, the quantity the expansion is taken in.
pub fn expansion_argument(rho: f64, len: LengthPair) -> f64 {
    rho * (1.0 / len.m as f64 + 1.0 / len.n as f64)
}

/// `|1/m - 1/n|`: how far apart two lengths are in the regime where pooling
/// noise matters.
pub fn artifact_signal(len: LengthPair) -> f64 {
    (1.0 / len.m as f64 - 1.0 / len.n as f64).abs()
}
