//! Similarity metrics between token-level representations and the
//! reference-language proximity score built on them.
//!
//! Every metric call is a sequential reduction, so a given input always
//! produces bit-identical output no matter how callers parallelize pairs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::align::AlignedPositions;
use crate::error::{Error, Result};
use crate::repr::{mean_pool, LayerRange, PooledVector, TokenMatrix};

/// Slack allowed outside a metric's nominal range before it is an error.
pub const RANGE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[serde(rename = "cosine")]
    MeanPooledCosine,
    #[serde(rename = "cka")]
    LinearCka,
    #[serde(rename = "rv")]
    Rv,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::MeanPooledCosine, Metric::LinearCka, Metric::Rv];

    /// Short column name used in tables and CSV headers.
    pub fn name(self) -> &'static str {
        match self {
            Metric::MeanPooledCosine => "cosine",
            Metric::LinearCka => "cka",
            Metric::Rv => "rv",
        }
    }

    pub fn is_matrix_metric(self) -> bool {
        !matches!(self, Metric::MeanPooledCosine)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" | "mean_pooled_cosine" => Ok(Metric::MeanPooledCosine),
            "cka" | "linear_cka" => Ok(Metric::LinearCka),
            "rv" => Ok(Metric::Rv),
            other => Err(Error::InvalidInput(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityValue {
    pub metric: Metric,
    pub value: f64,
    pub layer_index: usize,
}

/// Whether matrix metrics remove column means before comparing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Centering {
    #[default]
    Centered,
    /// The bare `||Y'X||² / (||X'X|| ||Y'Y||)` form, kept for ablations.
    Uncentered,
}

/// Eight interleaved partial sums, so the loop vectorizes.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

pub fn cosine(a: &PooledVector, b: &PooledVector) -> Result<f64> {
    cosine_slices(&a.values, &b.values)
}

pub(crate) fn cosine_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "cosine of vectors with {} and {} entries",
            a.len(),
            b.len()
        )));
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine of a zero-norm vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// The three Frobenius quantities shared by linear CKA and RV:
/// `||Y'X||²`, `||X'X||²` and `||Y'Y||²`.
struct AlignmentTerms {
    cross: f64,
    xx: f64,
    yy: f64,
}

fn check_pair(x: &TokenMatrix, y: &TokenMatrix) -> Result<()> {
    if x.rows() != y.rows() {
        return Err(Error::Dimension(format!(
            "matrix metrics need aligned rows, got {} and {}",
            x.rows(),
            y.rows()
        )));
    }
    if x.rows() < 2 {
        return Err(Error::InvalidInput(format!(
            "matrix metrics need at least 2 rows, got {}",
            x.rows()
        )));
    }
    Ok(())
}

fn column_centered(m: &TokenMatrix) -> Vec<f64> {
    let mean = mean_pool(m).values;
    let mut out = m.values().to_vec();
    for row in out.chunks_exact_mut(m.cols()) {
        for (v, mu) in row.iter_mut().zip(&mean) {
            *v -= mu;
        }
    }
    out
}

/// `A' B` for row-major `a` (rows x ca) and `b` (rows x cb), as ca x cb.
fn transpose_times(a: &[f64], b: &[f64], rows: usize, ca: usize, cb: usize) -> Vec<f64> {
    let mut c = vec![0.0; ca * cb];
    // SAFETY: every slice holds exactly the extents described by its dims and strides.
    unsafe {
        matrixmultiply::dgemm(
            ca, rows, cb, 1.0,
            a.as_ptr(), 1, ca as isize,
            b.as_ptr(), cb as isize, 1,
            0.0, c.as_mut_ptr(), cb as isize, 1,
        );
    }
    c
}

/// `X X'` for row-major `x` (rows x cols), as rows x rows.
fn gram(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut g = vec![0.0; rows * rows];
    // SAFETY: as above; the second operand is `x` read transposed.
    unsafe {
        matrixmultiply::dgemm(
            rows, cols, rows, 1.0,
            x.as_ptr(), cols as isize, 1,
            x.as_ptr(), 1, cols as isize,
            0.0, g.as_mut_ptr(), rows as isize, 1,
        );
    }
    g
}

fn alignment_terms(x: &TokenMatrix, y: &TokenMatrix, centering: Centering) -> Result<AlignmentTerms> {
    check_pair(x, y)?;
    let (xd, yd) = match centering {
        Centering::Centered => (column_centered(x), column_centered(y)),
        Centering::Uncentered => (x.values().to_vec(), y.values().to_vec()),
    };
    let rows = x.rows();
    let (dx, dy) = (x.cols(), y.cols());
    let terms = if rows <= dx.max(dy) {
        // ||Y'X||² = <XX', YY'> with both Grams rows x rows.
        let k = gram(&xd, rows, dx);
        let l = gram(&yd, rows, dy);
        AlignmentTerms {
            cross: dot(&k, &l),
            xx: dot(&k, &k),
            yy: dot(&l, &l),
        }
    } else {
        let sxy = transpose_times(&xd, &yd, rows, dx, dy);
        let sxx = transpose_times(&xd, &xd, rows, dx, dx);
        let syy = transpose_times(&yd, &yd, rows, dy, dy);
        AlignmentTerms {
            cross: dot(&sxy, &sxy),
            xx: dot(&sxx, &sxx),
            yy: dot(&syy, &syy),
        }
    };
    if terms.xx == 0.0 || terms.yy == 0.0 {
        let which = if terms.xx == 0.0 { "first" } else { "second" };
        return Err(Error::Degenerate(format!(
            "{which} matrix is all zero after centering"
        )));
    }
    Ok(terms)
}

fn unit_interval(metric: &'static str, value: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else if value > -RANGE_SLACK && value < 1.0 + RANGE_SLACK {
        Ok(value.clamp(0.0, 1.0))
    } else {
        Err(Error::OutOfRange { metric, value })
    }
}

/// Linear CKA on row-aligned matrices with column centering.
pub fn linear_cka(x: &TokenMatrix, y: &TokenMatrix) -> Result<f64> {
    linear_cka_with(x, y, Centering::Centered)
}

pub fn linear_cka_with(x: &TokenMatrix, y: &TokenMatrix, centering: Centering) -> Result<f64> {
    let t = alignment_terms(x, y, centering)?;
    unit_interval("linear CKA", t.cross / (t.xx.sqrt() * t.yy.sqrt()))
}

/// RV coefficient `tr(Sxy Syx) / sqrt(tr(Sxx²) tr(Syy²))` over the scatter
/// matrices of the column-centered inputs.
///
/// With centering the scatter traces are the same Frobenius norms that linear
/// CKA normalizes, so the two coincide numerically; they are kept as separate
/// entry points because they are reported as separate metrics.
pub fn rv_coefficient(x: &TokenMatrix, y: &TokenMatrix) -> Result<f64> {
    let t = alignment_terms(x, y, Centering::Centered)?;
    unit_interval("RV coefficient", t.cross / (t.xx * t.yy).sqrt())
}

/// Dispatches to one metric. Matrix metrics use `alignment` to pick paired
/// rows; without one, both inputs must already have the same row count.
pub fn pairwise_similarity(
    x: &TokenMatrix,
    y: &TokenMatrix,
    metric: Metric,
    alignment: Option<&AlignedPositions>,
) -> Result<SimilarityValue> {
    pairwise_similarity_with(x, y, metric, alignment, Centering::Centered)
}

pub fn pairwise_similarity_with(
    x: &TokenMatrix,
    y: &TokenMatrix,
    metric: Metric,
    alignment: Option<&AlignedPositions>,
    centering: Centering,
) -> Result<SimilarityValue> {
    let value = match metric {
        Metric::MeanPooledCosine => cosine(&mean_pool(x), &mean_pool(y))?,
        Metric::LinearCka | Metric::Rv => {
            let run = |a: &TokenMatrix, b: &TokenMatrix| match metric {
                Metric::LinearCka => linear_cka_with(a, b, centering),
                _ => rv_coefficient(a, b),
            };
            match alignment {
                Some(p) => {
                    if p.len() < 2 {
                        return Err(Error::InvalidInput(format!(
                            "{metric} needs at least 2 aligned positions, got {}",
                            p.len()
                        )));
                    }
                    run(&x.select_rows(&p.idx_a)?, &y.select_rows(&p.idx_b)?)?
                }
                None if x.rows() == y.rows() => run(x, y)?,
                None => {
                    return Err(Error::InvalidInput(format!(
                        "{metric} on sequences of length {} and {} needs an alignment",
                        x.rows(),
                        y.rows()
                    )))
                }
            }
        }
    };
    Ok(SimilarityValue {
        metric,
        value,
        layer_index: x.layer_index(),
    })
}

/// Unordered pair of language names.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LangPair(String, String);

impl LangPair {
    pub fn new(a: impl Into<String>, b: impl Into<String>) -> Self {
        let (a, b) = (a.into(), b.into());
        if a <= b {
            Self(a, b)
        } else {
            Self(b, a)
        }
    }

    pub fn first(&self) -> &str {
        &self.0
    }

    pub fn second(&self) -> &str {
        &self.1
    }

    pub fn contains(&self, lang: &str) -> bool {
        self.0 == lang || self.1 == lang
    }
}

impl fmt::Display for LangPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.0, self.1)
    }
}

/// Which languages form the cross-language baseline of the proximity score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BaselineMode {
    /// Mean over every other language, the reference included, divided by `|S| - 1`.
    #[default]
    IncludeReference,
    /// Mean over the non-reference languages only, divided by `|S| - 2`.
    ExcludeReference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximityScore {
    pub target_language: String,
    pub value: f64,
    pub metric: Metric,
}

/// Similarity of `target` to `reference` minus the target's mean similarity
/// to the other languages in `languages`.
pub fn python_proximity(
    sims: &BTreeMap<LangPair, f64>,
    metric: Metric,
    reference: &str,
    target: &str,
    languages: &BTreeSet<String>,
    mode: BaselineMode,
) -> Result<ProximityScore> {
    if !languages.contains(reference) || !languages.contains(target) {
        return Err(Error::InvalidInput(format!(
            "reference `{reference}` and target `{target}` must both be in the language set"
        )));
    }
    if reference == target {
        return Err(Error::InvalidInput("target equals the reference language".into()));
    }
    let lookup = |other: &str| {
        sims.get(&LangPair::new(other, target))
            .copied()
            .ok_or_else(|| Error::MissingPair(other.to_owned(), target.to_owned()))
    };
    let head = lookup(reference)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for other in languages.iter().filter(|l| l.as_str() != target) {
        if mode == BaselineMode::ExcludeReference && other == reference {
            continue;
        }
        sum += lookup(other)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidInput(
            "baseline is empty; add more languages or include the reference".into(),
        ));
    }
    Ok(ProximityScore {
        target_language: target.to_owned(),
        value: head - sum / count as f64,
        metric,
    })
}

/// Mean of the per-layer values inside `range`; every layer of the range must
/// be present exactly once.
pub fn aggregate_over_layers(values: &[SimilarityValue], range: LayerRange) -> Result<f64> {
    let mut by_layer: BTreeMap<usize, f64> = BTreeMap::new();
    for v in values.iter().filter(|v| range.contains(v.layer_index)) {
        if by_layer.insert(v.layer_index, v.value).is_some() {
            return Err(Error::InvalidInput(format!(
                "layer {} appears more than once",
                v.layer_index
            )));
        }
    }
    if let Some(missing) = range.iter().find(|l| !by_layer.contains_key(l)) {
        return Err(Error::LayerGap(missing));
    }
    Ok(by_layer.values().sum::<f64>() / range.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> PooledVector {
        PooledVector {
            values: v.to_vec(),
            source_length: 1,
            pooling: crate::repr::Pooling::Mean,
        }
    }

    fn mat(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> TokenMatrix {
        let values = (0..rows * cols).map(|k| f(k / cols, k % cols)).collect();
        TokenMatrix::new(rows, cols, values, vec![], 0).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let v = pv(&[0.3, -2.0, 5.0]);
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&pv(&[1.0, 0.0]), &pv(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(cosine(&pv(&[1.0, 0.0]), &pv(&[-1.0, 0.0])).unwrap(), -1.0);
    }

    #[test]
    fn cosine_rejects_zero_norm() {
        assert!(matches!(
            cosine(&pv(&[0.0, 0.0]), &pv(&[1.0, 0.0])),
            Err(Error::Degenerate(_))
        ));
        assert!(cosine(&pv(&[1.0]), &pv(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn cka_self_is_one() {
        let x = mat(6, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 - 1.5 + 0.1 * j as f64);
        assert!((linear_cka(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((rv_coefficient(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        // wide matrix takes the Gram route
        let w = mat(4, 9, |i, j| ((i * 5 + j * j) % 7) as f64);
        assert!((linear_cka(&w, &w).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cka_errors() {
        let x = mat(4, 2, |i, j| (i + j) as f64);
        let y = mat(5, 2, |i, j| (i * j) as f64);
        assert!(matches!(linear_cka(&x, &y), Err(Error::Dimension(_))));
        let flat = mat(4, 2, |_, j| j as f64);
        assert!(matches!(linear_cka(&flat, &x), Err(Error::Degenerate(_))));
        let one = mat(1, 2, |_, j| j as f64);
        assert!(linear_cka(&one, &one).is_err());
    }

    #[test]
    fn unit_interval_clamps_only_within_slack() {
        assert_eq!(unit_interval("t", 1.0 + 1e-12).unwrap(), 1.0);
        assert_eq!(unit_interval("t", -1e-12).unwrap(), 0.0);
        assert!(unit_interval("t", 1.0 + 1e-6).is_err());
    }

    #[test]
    fn pairwise_requires_alignment_for_unequal_lengths() {
        let x = mat(4, 2, |i, j| (i * 3 + j) as f64 + (i * i) as f64);
        let y = mat(6, 2, |i, j| (i + 2 * j) as f64 - (j * i) as f64);
        assert!(pairwise_similarity(&x, &y, Metric::LinearCka, None).is_err());
        assert!(pairwise_similarity(&x, &y, Metric::MeanPooledCosine, None).is_ok());
        let short = AlignedPositions::identity(1);
        assert!(pairwise_similarity(&x, &y, Metric::LinearCka, Some(&short)).is_err());
        let same = pairwise_similarity(&x, &x, Metric::LinearCka, Some(&AlignedPositions::identity(4)))
            .unwrap();
        assert!((same.value - 1.0).abs() < 1e-12);
    }

    fn langs(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn proximity_examples() {
        let s = langs(&["py", "java", "js", "go"]);
        let mut sims = BTreeMap::new();
        for a in &s {
            for b in &s {
                if a < b {
                    sims.insert(LangPair::new(a.as_str(), b.as_str()), 0.42);
                }
            }
        }
        let p = python_proximity(&sims, Metric::MeanPooledCosine, "py", "java", &s, BaselineMode::IncludeReference)
            .unwrap();
        assert!(p.value.abs() < 1e-15);

        sims.insert(LangPair::new("py", "java"), 0.9);
        sims.insert(LangPair::new("js", "java"), 0.7);
        sims.insert(LangPair::new("go", "java"), 0.6);
        let p = python_proximity(&sims, Metric::MeanPooledCosine, "py", "java", &s, BaselineMode::IncludeReference)
            .unwrap();
        assert!((p.value - (0.9 - 2.2 / 3.0)).abs() < 1e-12);
        assert!((p.value - 0.16667).abs() < 1e-5);

        let p = python_proximity(&sims, Metric::MeanPooledCosine, "py", "java", &s, BaselineMode::ExcludeReference)
            .unwrap();
        assert!((p.value - (0.9 - 0.65)).abs() < 1e-12);

        for v in sims.values_mut() {
            *v = 0.0;
        }
        sims.insert(LangPair::new("py", "go"), 1.0);
        let p = python_proximity(&sims, Metric::LinearCka, "py", "go", &s, BaselineMode::IncludeReference)
            .unwrap();
        assert!((p.value - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn proximity_names_missing_pair() {
        let s = langs(&["py", "java", "go"]);
        let mut sims = BTreeMap::new();
        sims.insert(LangPair::new("py", "java"), 0.5);
        let err = python_proximity(&sims, Metric::LinearCka, "py", "java", &s, BaselineMode::IncludeReference)
            .unwrap_err();
        match err {
            Error::MissingPair(a, b) => assert_eq!((a.as_str(), b.as_str()), ("go", "java")),
            e => panic!("unexpected {e}"),
        }
    }

    fn sv(layer: usize, value: f64) -> SimilarityValue {
        SimilarityValue {
            metric: Metric::LinearCka,
            value,
            layer_index: layer,
        }
    }

    #[test]
    fn layer_aggregation() {
        let r = LayerRange { lo: 8, hi: 24 };
        let constant: Vec<_> = (0..32).map(|l| sv(l, 0.5)).collect();
        assert_eq!(aggregate_over_layers(&constant, r).unwrap(), 0.5);

        let ramp: Vec<_> = (0..32).map(|l| sv(l, l as f64 / 32.0)).collect();
        assert!((aggregate_over_layers(&ramp, r).unwrap() - 0.5).abs() < 1e-15);

        let single = LayerRange { lo: 3, hi: 3 };
        assert_eq!(aggregate_over_layers(&ramp, single).unwrap(), 3.0 / 32.0);

        let gappy: Vec<_> = ramp.iter().copied().filter(|v| v.layer_index != 12).collect();
        assert!(matches!(aggregate_over_layers(&gappy, r), Err(Error::LayerGap(12))));
    }

    #[test]
    fn metric_names_round_trip() {
        for m in Metric::ALL {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
        assert!("kernel_cka".parse::<Metric>().is_err());
    }
}
