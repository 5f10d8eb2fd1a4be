//! End-to-end audit of an activation bundle: pairwise similarities over a
//! layer range, confound covariates, proximity scores and confound tables.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{
    filter_min_shared, length_ratio_from_counts, shared_token_fraction, shared_token_positions,
    SharedFractionMode, DEFAULT_MIN_SHARED,
};
use crate::bundle::{read_bundle, ActivationBundle};
use crate::error::{Error, Result};
use crate::metrics::{
    aggregate_over_layers, pairwise_similarity_with, python_proximity, BaselineMode, Centering,
    LangPair, Metric,
};
use crate::repr::{middle_layers, LayerRange};
use crate::stats::{
    bootstrap_fit, confound_table, fisher_r2_ci, ols_standardized, pearson, records_frame, sample_std,
    CiConfig, ConfoundRow, Interval, RegressionSpec, SimilarityRecord, LENGTH_RATIO,
    MIN_CONFOUND_RECORDS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LayerPolicy {
    /// Layers `floor(n/4)..=floor(3n/4)`.
    #[default]
    Middle,
    Explicit { lo: usize, hi: usize },
}

impl LayerPolicy {
    pub fn resolve(&self, n_layers: usize) -> Result<LayerRange> {
        match *self {
            LayerPolicy::Middle => middle_layers(n_layers),
            LayerPolicy::Explicit { lo, hi } => LayerRange::new(lo, hi, n_layers),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub bundle: PathBuf,
    pub metrics: Vec<Metric>,
    pub layers: LayerPolicy,
    /// Reference language for proximity scores; `None` regresses raw pairwise
    /// similarities instead.
    pub reference: Option<String>,
    pub min_shared: usize,
    pub ci: CiConfig,
    pub baseline: BaselineMode,
    pub shared_fraction: SharedFractionMode,
    pub centering: Centering,
    pub output_dir: Option<PathBuf>,
}

impl AuditConfig {
    pub fn new(bundle: impl Into<PathBuf>) -> Self {
        Self {
            bundle: bundle.into(),
            metrics: vec![Metric::MeanPooledCosine, Metric::LinearCka, Metric::Rv],
            layers: LayerPolicy::Middle,
            reference: None,
            min_shared: DEFAULT_MIN_SHARED,
            ci: CiConfig::Bootstrap {
                replicates: 5000,
                seed: 0,
                level: 0.95,
            },
            baseline: BaselineMode::IncludeReference,
            shared_fraction: SharedFractionMode::Types,
            centering: Centering::Centered,
            output_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.metrics.is_empty() {
            return Err(Error::InvalidInput("metric set is empty".into()));
        }
        let distinct: BTreeSet<_> = self.metrics.iter().collect();
        if distinct.len() != self.metrics.len() {
            return Err(Error::InvalidInput("metric listed more than once".into()));
        }
        if self.metrics.iter().any(|m| m.is_matrix_metric()) && self.min_shared < 2 {
            return Err(Error::InvalidInput(format!(
                "matrix metrics need at least 2 shared tokens per pair, got k = {}",
                self.min_shared
            )));
        }
        if let CiConfig::Bootstrap { replicates, .. } = self.ci {
            if replicates < 100 {
                return Err(Error::InvalidInput(format!(
                    "bootstrap needs at least 100 replicates, got {replicates}"
                )));
            }
        }
        Ok(())
    }
}

/// Outcome of the confound regressions for one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricFit {
    pub metric: Metric,
    pub row: Option<ConfoundRow>,
    pub error: Option<String>,
}

/// Length-only R² of one metric's raw similarity within one language pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossDomainCell {
    pub metric: Metric,
    pub r2: Option<f64>,
    pub ci: Option<Interval>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossDomainRow {
    pub pair: LangPair,
    pub n: usize,
    pub cells: Vec<CrossDomainCell>,
}

/// Mean and across-pair standard deviation of the layer-aggregated raw CKA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkaLevel {
    pub pair: LangPair,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairGroup {
    pub pair: LangPair,
    pub records: Vec<SimilarityRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub metrics: Vec<Metric>,
    pub layer_range: LayerRange,
    pub reference: Option<String>,
    pub languages: Vec<String>,
    /// Regression units: proximity scores per (item, target) with a reference
    /// language, raw pair similarities per (item, pair) without.
    pub records: Vec<SimilarityRecord>,
    /// Raw similarities of every kept (item, language pair), grouped by pair.
    pub pairs: Vec<PairGroup>,
    pub fits: Vec<MetricFit>,
    pub crossdomain: Vec<CrossDomainRow>,
    pub cka_levels: Vec<CkaLevel>,
    pub included: usize,
    pub excluded: usize,
    pub excluded_ids: Vec<String>,
}

impl AuditReport {
    pub fn all_fits_succeeded(&self) -> bool {
        self.fits.iter().all(|f| f.row.is_some())
            && self
                .crossdomain
                .iter()
                .flat_map(|r| &r.cells)
                .all(|c| c.error.is_none())
    }
}

pub fn run_audit(cfg: &AuditConfig) -> Result<AuditReport> {
    cfg.validate()?;
    let bundle = read_bundle(&cfg.bundle)?;
    run_audit_on(&bundle, cfg)
}

struct PairOutcome {
    kept: bool,
    record: SimilarityRecord,
}

/// Runs the audit on an already-loaded bundle (`cfg.bundle` is ignored).
pub fn run_audit_on(bundle: &ActivationBundle, cfg: &AuditConfig) -> Result<AuditReport> {
    cfg.validate()?;
    bundle.validate()?;
    let manifest = &bundle.manifest;
    let range = cfg.layers.resolve(manifest.n_layers)?;

    let mut index: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    for (i, e) in manifest.sequences.iter().enumerate() {
        index.entry(e.id.as_str()).or_default().insert(e.language.as_str(), i);
    }
    let languages: BTreeSet<&str> = manifest.sequences.iter().map(|e| e.language.as_str()).collect();
    if languages.len() < 2 {
        return Err(Error::InvalidInput("audit needs at least two languages".into()));
    }
    for (id, by_lang) in &index {
        if let Some(missing) = languages.iter().find(|l| !by_lang.contains_key(*l)) {
            return Err(Error::MissingCounterpart {
                id: id.to_string(),
                language: missing.to_string(),
            });
        }
    }
    if let Some(r) = &cfg.reference {
        if !languages.contains(r.as_str()) {
            return Err(Error::InvalidInput(format!("reference language `{r}` not in bundle")));
        }
    }

    let lang_pairs: Vec<LangPair> = languages
        .iter()
        .enumerate()
        .flat_map(|(i, a)| languages.iter().skip(i + 1).map(move |b| LangPair::new(*a, *b)))
        .collect();
    let jobs: Vec<(&str, &LangPair)> = index
        .keys()
        .flat_map(|id| lang_pairs.iter().map(move |p| (*id, p)))
        .collect();

    let outcomes: Vec<PairOutcome> = jobs
        .par_iter()
        .map(|(id, pair)| {
            let ia = index[id][pair.first()];
            let ib = index[id][pair.second()];
            compare_pair(bundle, id, pair, ia, ib, range, cfg)
        })
        .collect::<Result<_>>()?;
    let outcome_of: HashMap<(&str, &LangPair), &PairOutcome> =
        jobs.iter().copied().zip(outcomes.iter()).collect();

    let mut records = Vec::new();
    let mut excluded_ids = Vec::new();
    match &cfg.reference {
        Some(reference) => {
            let lang_set: BTreeSet<String> = languages.iter().map(|s| s.to_string()).collect();
            for id in index.keys() {
                for target in languages.iter().filter(|l| **l != reference.as_str()) {
                    let unit = format!("{id}|{reference}-{target}");
                    let needed: Vec<&PairOutcome> = lang_pairs
                        .iter()
                        .filter(|p| p.contains(target))
                        .map(|p| outcome_of[&(*id, p)])
                        .collect();
                    if needed.iter().any(|o| !o.kept) {
                        excluded_ids.push(unit);
                        continue;
                    }
                    let head = outcome_of[&(*id, &LangPair::new(reference.as_str(), *target))];
                    let mut similarity = BTreeMap::new();
                    for &metric in &cfg.metrics {
                        let sims: BTreeMap<LangPair, f64> = lang_pairs
                            .iter()
                            .filter(|p| p.contains(target))
                            .map(|p| (p.clone(), outcome_of[&(*id, p)].record.similarity[&metric]))
                            .collect();
                        let score = python_proximity(&sims, metric, reference, target, &lang_set, cfg.baseline)?;
                        similarity.insert(metric, score.value);
                    }
                    // covariates oriented as (reference, target)
                    let (lf, ls) = head.record.lengths.expect("pair lengths recorded");
                    let lengths = if head_is_reference_first(reference, target) { (lf, ls) } else { (ls, lf) };
                    records.push(SimilarityRecord {
                        pair_id: unit,
                        similarity,
                        lengths: Some(lengths),
                        ..head.record.clone()
                    });
                }
            }
        }
        None => {
            for ((id, pair), o) in jobs.iter().zip(&outcomes) {
                if o.kept {
                    records.push(o.record.clone());
                } else {
                    excluded_ids.push(format!("{id}|{pair}"));
                }
            }
        }
    }

    let pairs: Vec<PairGroup> = lang_pairs
        .iter()
        .map(|p| PairGroup {
            pair: p.clone(),
            records: index
                .keys()
                .map(|id| outcome_of[&(*id, p)])
                .filter(|o| o.kept)
                .map(|o| o.record.clone())
                .collect(),
        })
        .collect();

    let fits = cfg
        .metrics
        .iter()
        .map(|&metric| match confound_table(&records, metric, cfg.ci) {
            Ok(row) => MetricFit { metric, row: Some(row), error: None },
            Err(e) => MetricFit { metric, row: None, error: Some(e.to_string()) },
        })
        .collect();

    let crossdomain = pairs
        .iter()
        .map(|g| CrossDomainRow {
            pair: g.pair.clone(),
            n: g.records.len(),
            cells: cfg
                .metrics
                .iter()
                .map(|&metric| match length_only_r2(&g.records, metric, cfg.ci) {
                    Ok((r2, ci)) => CrossDomainCell { metric, r2: Some(r2), ci: Some(ci), error: None },
                    Err(e) => CrossDomainCell { metric, r2: None, ci: None, error: Some(e.to_string()) },
                })
                .collect(),
        })
        .collect();

    let cka_levels = if cfg.metrics.contains(&Metric::LinearCka) {
        pairs
            .iter()
            .filter(|g| !g.records.is_empty())
            .map(|g| {
                let v: Vec<f64> = g.records.iter().map(|r| r.similarity[&Metric::LinearCka]).collect();
                CkaLevel {
                    pair: g.pair.clone(),
                    mean: v.iter().sum::<f64>() / v.len() as f64,
                    std: if v.len() > 1 { sample_std(&v) } else { 0.0 },
                    n: v.len(),
                }
            })
            .collect()
    } else {
        Vec::new()
    };

    Ok(AuditReport {
        metrics: cfg.metrics.clone(),
        layer_range: range,
        reference: cfg.reference.clone(),
        languages: languages.iter().map(|s| s.to_string()).collect(),
        included: records.len(),
        excluded: excluded_ids.len(),
        records,
        pairs,
        fits,
        crossdomain,
        cka_levels,
        excluded_ids,
    })
}

fn head_is_reference_first(reference: &str, target: &str) -> bool {
    LangPair::new(reference, target).first() == reference
}

fn compare_pair(
    bundle: &ActivationBundle,
    id: &str,
    pair: &LangPair,
    ia: usize,
    ib: usize,
    range: LayerRange,
    cfg: &AuditConfig,
) -> Result<PairOutcome> {
    let ea = &bundle.manifest.sequences[ia];
    let eb = &bundle.manifest.sequences[ib];
    let alignment = shared_token_positions(&ea.tokens, &eb.tokens);
    let kept = filter_min_shared(&alignment, cfg.min_shared);
    let mut similarity = BTreeMap::new();
    if kept {
        let mut per_layer: BTreeMap<Metric, Vec<_>> = BTreeMap::new();
        for layer in range.iter() {
            let x = bundle.layer_matrix(ia, layer)?;
            let y = bundle.layer_matrix(ib, layer)?;
            for &metric in &cfg.metrics {
                let v = pairwise_similarity_with(&x, &y, metric, Some(&alignment), cfg.centering)?;
                per_layer.entry(metric).or_default().push(v);
            }
        }
        for (metric, values) in per_layer {
            similarity.insert(metric, aggregate_over_layers(&values, range)?);
        }
    }
    let depth_range = match (ea.depth, eb.depth) {
        (Some(a), Some(b)) => Some((a - b).abs()),
        _ => None,
    };
    Ok(PairOutcome {
        kept,
        record: SimilarityRecord {
            pair_id: format!("{id}|{pair}"),
            similarity,
            length_ratio: length_ratio_from_counts(ea.tokens.len(), eb.tokens.len()),
            depth_range,
            shared_fraction: shared_token_fraction(&ea.tokens, &eb.tokens, cfg.shared_fraction),
            lengths: Some((ea.tokens.len(), eb.tokens.len())),
        },
    })
}

/// R² of a metric's similarity on length ratio alone, with the configured interval.
pub fn length_only_r2(records: &[SimilarityRecord], metric: Metric, ci: CiConfig) -> Result<(f64, Interval)> {
    if records.len() < MIN_CONFOUND_RECORDS {
        return Err(Error::InvalidInput(format!(
            "need at least {MIN_CONFOUND_RECORDS} records, got {}",
            records.len()
        )));
    }
    let frame = records_frame(records, metric)?;
    let spec = RegressionSpec::standardized(metric.name(), &[LENGTH_RATIO]);
    let fit = ols_standardized(&frame, &spec)?;
    let quantity = "r2_length_only".to_owned();
    let interval = match ci {
        CiConfig::Bootstrap { replicates, seed, level } => {
            let s = bootstrap_fit(&frame, &spec, replicates, seed, level)?;
            Interval { quantity, lo: s.r2_lo, hi: s.r2_hi, level, method: ci.method() }
        }
        CiConfig::Fisher { level } => {
            let r = pearson(frame.column(LENGTH_RATIO)?, frame.column(metric.name())?)?;
            let f = fisher_r2_ci(r, frame.n_rows(), level)?;
            Interval { quantity, lo: f.r2_lo, hi: f.r2_hi, level, method: ci.method() }
        }
    };
    Ok((fit.r2, interval))
}
