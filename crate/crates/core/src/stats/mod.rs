//! Regression and uncertainty machinery for the confound audit.

mod bootstrap;
mod confound;
mod fisher;
mod frame;
mod ols;

pub use bootstrap::{bootstrap_fit, bootstrap_r2_ci, BootstrapSummary, MAX_SKIPPED_FRACTION};
pub use confound::{
    confound_table, records_frame, CiConfig, ConfoundRow, SimilarityRecord, DEPTH_RANGE,
    LENGTH_RATIO, MIN_CONFOUND_RECORDS, SHARED_FRACTION,
};
pub use fisher::{fisher_r2_ci, normal_quantile, FisherInterval};
pub use frame::Frame;
pub use ols::{ols_standardized, r2_delta, CiMethod, Interval, RegressionResult, RegressionSpec};

use crate::error::{Error, Result};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (`n - 1` denominator).
pub fn sample_std(x: &[f64]) -> f64 {
    let m = mean(x);
    let ss: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (x.len() as f64 - 1.0)).sqrt()
}

/// z-scores with the sample standard deviation. `name` labels the error for a
/// constant column.
pub fn zscore(x: &[f64], name: &str) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(Error::InvalidInput(format!("column `{name}` needs at least 2 values")));
    }
    let m = mean(x);
    let sd = sample_std(x);
    // spread below ~1e-13 of the magnitude is rounding noise on a constant column
    if !(sd > 1e-13 * m.abs().max(f64::MIN_POSITIVE)) {
        return Err(Error::ConstantColumn(name.to_owned()));
    }
    Ok(x.iter().map(|v| (v - m) / sd).collect())
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!(
            "pearson on columns of length {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "pearson needs at least 3 observations, got {}",
            x.len()
        )));
    }
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::ConstantColumn("x".into()));
    }
    if syy == 0.0 {
        return Err(Error::ConstantColumn("y".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Percentile with linear interpolation between order statistics
/// (`(n - 1) q` positioning). `sorted` must be ascending and non-empty.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    }
}
