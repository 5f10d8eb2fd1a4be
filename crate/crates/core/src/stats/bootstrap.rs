use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ols_standardized, percentile_sorted, sample_std, Frame, RegressionSpec};
use crate::error::{Error, Result};
use crate::rng::Substreams;

/// Share of degenerate replicates tolerated before the bootstrap gives up.
pub const MAX_SKIPPED_FRACTION: f64 = 0.01;

pub const MIN_REPLICATES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub r2_lo: f64,
    pub r2_hi: f64,
    pub level: f64,
    pub replicates: usize,
    /// Replicates dropped because a resampled column had no variance (or the
    /// resampled design lost rank).
    pub skipped: usize,
    /// Standard deviation of each beta across kept replicates.
    pub beta_se: Vec<f64>,
}

/// Case-resampling bootstrap of a fit: rows are drawn with replacement `b`
/// times and the model is refit each time. Returns the percentile interval of
/// R² and the bootstrap standard errors of the betas.
///
/// Rows are sorted by id before drawing and replicate `i` draws its indices
/// from substream `i` of `seed`, so the result does not depend on input row
/// order or thread count.
pub fn bootstrap_fit(
    data: &Frame,
    spec: &RegressionSpec,
    b: usize,
    seed: u64,
    level: f64,
) -> Result<BootstrapSummary> {
    if b < MIN_REPLICATES {
        return Err(Error::InvalidInput(format!(
            "bootstrap needs at least {MIN_REPLICATES} replicates, got {b}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("confidence level must be in (0, 1), got {level}")));
    }
    spec.validate()?;
    let base = data.sorted_by_id();
    let n = base.n_rows();
    if n == 0 {
        return Err(Error::InvalidInput("bootstrap on an empty table".into()));
    }
    let streams = Substreams::new(seed);

    let fits: Vec<Option<(f64, Vec<f64>)>> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = streams.stream(rep as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            match ols_standardized(&base.take_rows(&idx), spec) {
                Ok(fit) => Ok(Some((fit.r2, fit.betas))),
                Err(e) if e.is_degenerate_fit() => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    let skipped = fits.iter().filter(|f| f.is_none()).count();
    if skipped as f64 > MAX_SKIPPED_FRACTION * b as f64 {
        return Err(Error::TooManySkipped { skipped, total: b });
    }
    let kept: Vec<&(f64, Vec<f64>)> = fits.iter().flatten().collect();
    let mut r2s: Vec<f64> = kept.iter().map(|f| f.0).collect();
    r2s.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let beta_se = (0..spec.predictors.len())
        .map(|j| sample_std(&kept.iter().map(|f| f.1[j]).collect::<Vec<_>>()))
        .collect();

    Ok(BootstrapSummary {
        r2_lo: percentile_sorted(&r2s, tail),
        r2_hi: percentile_sorted(&r2s, 1.0 - tail),
        level,
        replicates: b,
        skipped,
        beta_se,
    })
}

/// Percentile bootstrap interval for R².
pub fn bootstrap_r2_ci(
    data: &Frame,
    spec: &RegressionSpec,
    b: usize,
    seed: u64,
    level: f64,
) -> Result<(f64, f64)> {
    bootstrap_fit(data, spec, b, seed, level).map(|s| (s.r2_lo, s.r2_hi))
}
