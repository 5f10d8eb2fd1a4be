use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

pub(crate) fn normal_two_sided_p(z: f64) -> f64 {
    2.0 * (1.0 - Normal::standard().cdf(z.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherInterval {
    pub r_lo: f64,
    pub r_hi: f64,
    pub r2_lo: f64,
    pub r2_hi: f64,
}

/// Fisher-z interval for a correlation, also expressed on the R² scale.
///
/// The correlation interval is `tanh(atanh(r) -/+ z / sqrt(n - 3))`. Its
/// endpoints are squared and ordered; an interval straddling zero maps to
/// `[0, max(lo², hi²)]`.
pub fn fisher_r2_ci(r: f64, n: usize, level: f64) -> Result<FisherInterval> {
    if !(r.abs() < 1.0) {
        return Err(Error::InvalidInput(format!("Fisher interval needs |r| < 1, got {r}")));
    }
    if n < 4 {
        return Err(Error::InvalidInput(format!("Fisher interval needs n >= 4, got {n}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("confidence level must be in (0, 1), got {level}")));
    }
    let z = r.atanh();
    let half = normal_quantile(1.0 - (1.0 - level) / 2.0) / ((n - 3) as f64).sqrt();
    let r_lo = (z - half).tanh();
    let r_hi = (z + half).tanh();
    let (sq_lo, sq_hi) = (r_lo * r_lo, r_hi * r_hi);
    let (r2_lo, r2_hi) = if r_lo <= 0.0 && r_hi >= 0.0 {
        (0.0, sq_lo.max(sq_hi))
    } else {
        (sq_lo.min(sq_hi), sq_lo.max(sq_hi))
    };
    Ok(FisherInterval { r_lo, r_hi, r2_lo, r2_hi })
}
