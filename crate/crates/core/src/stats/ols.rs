use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{mean, zscore, Frame};
use crate::error::{Error, Result};

/// Relative size of a pivot below which the design is treated as rank deficient.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegressionSpec {
    pub dependent: String,
    pub predictors: Vec<String>,
    /// z-score the dependent variable and every predictor before fitting.
    pub standardize: bool,
}

impl RegressionSpec {
    pub fn standardized(dependent: impl Into<String>, predictors: &[&str]) -> Self {
        Self {
            dependent: dependent.into(),
            predictors: predictors.iter().map(|s| s.to_string()).collect(),
            standardize: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.predictors.is_empty() {
            return Err(Error::InvalidInput("regression needs at least one predictor".into()));
        }
        let mut seen = HashSet::new();
        for p in &self.predictors {
            if !seen.insert(p.as_str()) || *p == self.dependent {
                return Err(Error::InvalidInput(format!("column `{p}` used more than once")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CiMethod {
    Bootstrap,
    Fisher,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub quantity: String,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub method: CiMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub dependent: String,
    pub predictors: Vec<String>,
    pub betas: Vec<f64>,
    pub r2: f64,
    /// R² of the length-only fit, when one accompanies this result.
    pub r2_length_only: Option<f64>,
    pub n: usize,
    pub ci: Vec<Interval>,
    /// Bootstrap standard errors of `betas`.
    pub beta_se: Option<Vec<f64>>,
    /// Two-sided normal-approximation p-value proxies, `|beta| / se` against N(0, 1).
    pub p_proxy: Option<Vec<f64>>,
}

impl RegressionResult {
    pub fn beta(&self, predictor: &str) -> Option<f64> {
        self.predictors
            .iter()
            .position(|p| p == predictor)
            .map(|i| self.betas[i])
    }
}

/// Least-squares fit of the dependent column on the predictors.
///
/// With `standardize`, all columns are z-scored (sample standard deviation)
/// and the coefficients are standardized betas; otherwise columns are only
/// centered, which absorbs the intercept. Solved by Householder QR with
/// column-norm pivoting.
pub fn ols_standardized(data: &Frame, spec: &RegressionSpec) -> Result<RegressionResult> {
    spec.validate()?;
    let n = data.n_rows();
    let p = spec.predictors.len();
    if n <= p + 1 {
        return Err(Error::InvalidInput(format!(
            "{n} observations are too few for {p} predictors"
        )));
    }
    let prepare = |name: &str| -> Result<Vec<f64>> {
        let col = data.column(name)?;
        if spec.standardize {
            zscore(col, name)
        } else {
            let m = mean(col);
            let centered: Vec<f64> = col.iter().map(|v| v - m).collect();
            if centered.iter().all(|v| *v == 0.0) {
                return Err(Error::ConstantColumn(name.to_owned()));
            }
            Ok(centered)
        }
    };
    let y = prepare(&spec.dependent)?;
    let mut design = Vec::with_capacity(n * p);
    for name in &spec.predictors {
        design.extend(prepare(name)?);
    }

    let betas = pivoted_qr_solve(design.clone(), n, p, &y)
        .map_err(|bad| Error::RankDeficient(bad.into_iter().map(|j| spec.predictors[j].clone()).collect()))?;

    let mut ssr = 0.0;
    let mut sst = 0.0;
    for i in 0..n {
        let fitted: f64 = (0..p).map(|j| design[j * n + i] * betas[j]).sum();
        let e = y[i] - fitted;
        ssr += e * e;
        sst += y[i] * y[i];
    }
    let r2 = (1.0 - ssr / sst).clamp(0.0, 1.0);

    Ok(RegressionResult {
        dependent: spec.dependent.clone(),
        predictors: spec.predictors.clone(),
        betas,
        r2,
        r2_length_only: None,
        n,
        ci: Vec::new(),
        beta_se: None,
        p_proxy: None,
    })
}

/// Solves `min ||A x - y||` for column-major `a` (n x p). On rank deficiency
/// returns the original indices of the columns left outside the numerical rank.
fn pivoted_qr_solve(mut a: Vec<f64>, n: usize, p: usize, y: &[f64]) -> std::result::Result<Vec<f64>, Vec<usize>> {
    let mut qty = y.to_vec();
    let mut perm: Vec<usize> = (0..p).collect();
    let mut diag = vec![0.0; p];
    let mut lead = 0.0f64;

    for k in 0..p {
        // pivot: largest remaining column norm below row k
        let norm_below = |a: &[f64], j: usize| -> f64 {
            a[j * n + k..(j + 1) * n].iter().map(|v| v * v).sum::<f64>()
        };
        let (best, best_norm2) = (k..p)
            .map(|j| (j, norm_below(&a, j)))
            .fold((k, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        if best != k {
            for i in 0..n {
                a.swap(k * n + i, best * n + i);
            }
            perm.swap(k, best);
        }
        let norm = best_norm2.sqrt();
        if k == 0 {
            lead = norm;
        }
        if !(norm > RANK_TOL * lead) {
            let mut bad: Vec<usize> = perm[k..].to_vec();
            bad.sort_unstable();
            return Err(bad);
        }

        let col = &mut a[k * n..(k + 1) * n];
        let alpha = if col[k] > 0.0 { -norm } else { norm };
        col[k] -= alpha;
        let v: Vec<f64> = col[k..].to_vec();
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        diag[k] = alpha;

        for j in k + 1..p {
            let cj = &mut a[j * n + k..(j + 1) * n];
            let s = 2.0 * v.iter().zip(cj.iter()).map(|(a, b)| a * b).sum::<f64>() / vnorm2;
            for (c, vi) in cj.iter_mut().zip(&v) {
                *c -= s * vi;
            }
        }
        let tail = &mut qty[k..];
        let s = 2.0 * v.iter().zip(tail.iter()).map(|(a, b)| a * b).sum::<f64>() / vnorm2;
        for (c, vi) in tail.iter_mut().zip(&v) {
            *c -= s * vi;
        }
    }

    // back substitution on R (upper triangle of a, diagonal in `diag`)
    let mut x = vec![0.0; p];
    for k in (0..p).rev() {
        let mut s = qty[k];
        for j in k + 1..p {
            s -= a[j * n + k] * x[j];
        }
        x[k] = s / diag[k];
    }
    let mut out = vec![0.0; p];
    for (k, &orig) in perm.iter().enumerate() {
        out[orig] = x[k];
    }
    Ok(out)
}

/// R² gained by the extra predictors of `full` over the nested `small` fit.
pub fn r2_delta(data: &Frame, small: &RegressionSpec, full: &RegressionSpec) -> Result<f64> {
    if small.dependent != full.dependent || small.standardize != full.standardize {
        return Err(Error::InvalidInput("nested fits must share the dependent variable".into()));
    }
    if let Some(extra) = small.predictors.iter().find(|p| !full.predictors.contains(p)) {
        return Err(Error::InvalidInput(format!(
            "specs are not nested: `{extra}` missing from the larger model"
        )));
    }
    let r_small = ols_standardized(data, small)?.r2;
    let r_full = ols_standardized(data, full)?.r2;
    Ok(r_full - r_small)
}
