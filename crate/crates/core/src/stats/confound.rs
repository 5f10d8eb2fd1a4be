use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::fisher::normal_two_sided_p;
use super::{
    bootstrap_fit, fisher_r2_ci, ols_standardized, pearson, CiMethod, Frame, Interval,
    RegressionResult, RegressionSpec,
};
use crate::align::length_ratio_from_counts;
use crate::error::{Error, Result};
use crate::metrics::Metric;

pub const LENGTH_RATIO: &str = "length_ratio";
pub const DEPTH_RANGE: &str = "depth_range";
pub const SHARED_FRACTION: &str = "shared_fraction";

pub const MIN_CONFOUND_RECORDS: usize = 10;

/// One compared pair: its similarity under each metric plus the confound
/// covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRecord {
    pub pair_id: String,
    pub similarity: BTreeMap<Metric, f64>,
    pub length_ratio: f64,
    pub depth_range: Option<f64>,
    pub shared_fraction: f64,
    pub lengths: Option<(usize, usize)>,
}

impl SimilarityRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_ratio > 0.0 && self.length_ratio <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "{}: length ratio {} outside (0, 1]",
                self.pair_id, self.length_ratio
            )));
        }
        if !(0.0..=1.0).contains(&self.shared_fraction) {
            return Err(Error::InvalidInput(format!(
                "{}: shared fraction {} outside [0, 1]",
                self.pair_id, self.shared_fraction
            )));
        }
        if let Some((m, n)) = self.lengths {
            let expected = length_ratio_from_counts(m, n);
            if (expected - self.length_ratio).abs() > 1e-12 {
                return Err(Error::InvalidInput(format!(
                    "{}: length ratio {} disagrees with token counts ({m}, {n})",
                    self.pair_id, self.length_ratio
                )));
            }
        }
        Ok(())
    }
}

/// Table of `records` with the metric's similarity as a column named after
/// the metric, plus the covariate columns. The depth column is present only
/// when every record carries a depth range.
pub fn records_frame(records: &[SimilarityRecord], metric: Metric) -> Result<Frame> {
    let mut sims = Vec::with_capacity(records.len());
    for r in records {
        r.validate()?;
        sims.push(*r.similarity.get(&metric).ok_or_else(|| {
            Error::InvalidInput(format!("{}: no {metric} similarity", r.pair_id))
        })?);
    }
    let mut f = Frame::new(records.iter().map(|r| r.pair_id.clone()).collect())
        .with_column(metric.name(), sims)?
        .with_column(LENGTH_RATIO, records.iter().map(|r| r.length_ratio).collect())?
        .with_column(SHARED_FRACTION, records.iter().map(|r| r.shared_fraction).collect())?;
    let depths: Option<Vec<f64>> = records.iter().map(|r| r.depth_range).collect();
    if let Some(d) = depths {
        f = f.with_column(DEPTH_RANGE, d)?;
    }
    Ok(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CiConfig {
    Bootstrap { replicates: usize, seed: u64, level: f64 },
    Fisher { level: f64 },
}

impl CiConfig {
    pub fn method(&self) -> CiMethod {
        match self {
            CiConfig::Bootstrap { .. } => CiMethod::Bootstrap,
            CiConfig::Fisher { .. } => CiMethod::Fisher,
        }
    }

    pub fn level(&self) -> f64 {
        match *self {
            CiConfig::Bootstrap { level, .. } | CiConfig::Fisher { level } => level,
        }
    }
}

/// Length-only fit, full confound fit and univariate correlation for one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfoundRow {
    pub metric: Metric,
    pub n: usize,
    pub length_only: RegressionResult,
    pub full: RegressionResult,
    /// Pearson correlation of the similarity with the length ratio.
    pub r_univ: f64,
    /// Interval on the length-only R².
    pub r2_length_ci: Interval,
}

pub fn confound_table(records: &[SimilarityRecord], metric: Metric, ci: CiConfig) -> Result<ConfoundRow> {
    if records.len() < MIN_CONFOUND_RECORDS {
        return Err(Error::InvalidInput(format!(
            "confound table needs at least {MIN_CONFOUND_RECORDS} records, got {}",
            records.len()
        )));
    }
    let frame = records_frame(records, metric)?;
    let dv = metric.name();
    let length_spec = RegressionSpec::standardized(dv, &[LENGTH_RATIO]);
    let mut full_predictors = vec![LENGTH_RATIO];
    if frame.has_column(DEPTH_RANGE) {
        full_predictors.push(DEPTH_RANGE);
    }
    full_predictors.push(SHARED_FRACTION);
    let full_spec = RegressionSpec::standardized(dv, &full_predictors);

    let mut length_only = ols_standardized(&frame, &length_spec)?;
    let mut full = ols_standardized(&frame, &full_spec)?;
    let r_univ = pearson(frame.column(LENGTH_RATIO)?, frame.column(dv)?)?;
    full.r2_length_only = Some(length_only.r2);
    length_only.r2_length_only = Some(length_only.r2);

    let quantity = "r2_length_only".to_owned();
    let r2_length_ci = match ci {
        CiConfig::Bootstrap { replicates, seed, level } => {
            let short = bootstrap_fit(&frame, &length_spec, replicates, seed, level)?;
            let long = bootstrap_fit(&frame, &full_spec, replicates, seed, level)?;
            attach_p_proxy(&mut length_only, short.beta_se);
            attach_p_proxy(&mut full, long.beta_se);
            full.ci.push(Interval {
                quantity: "r2_full".into(),
                lo: long.r2_lo,
                hi: long.r2_hi,
                level,
                method: CiMethod::Bootstrap,
            });
            Interval {
                quantity,
                lo: short.r2_lo,
                hi: short.r2_hi,
                level,
                method: CiMethod::Bootstrap,
            }
        }
        CiConfig::Fisher { level } => {
            let f = fisher_r2_ci(r_univ, frame.n_rows(), level)?;
            Interval {
                quantity,
                lo: f.r2_lo,
                hi: f.r2_hi,
                level,
                method: CiMethod::Fisher,
            }
        }
    };
    length_only.ci.push(r2_length_ci.clone());

    Ok(ConfoundRow {
        metric,
        n: frame.n_rows(),
        length_only,
        full,
        r_univ,
        r2_length_ci,
    })
}

fn attach_p_proxy(fit: &mut RegressionResult, se: Vec<f64>) {
    let p = fit
        .betas
        .iter()
        .zip(&se)
        .map(|(b, s)| if *s > 0.0 { normal_two_sided_p(b / s) } else { 0.0 })
        .collect();
    fit.beta_se = Some(se);
    fit.p_proxy = Some(p);
}
