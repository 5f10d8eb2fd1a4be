//! Model-free validation: anisotropic random sequences, the length-ratio
//! experiment, and comparison against the closed-form prediction.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::ActivationBundle;
use crate::error::{Error, Result};
use crate::metrics::{cosine, linear_cka};
use crate::repr::{mean_pool, TokenMatrix};
use crate::rng::Substreams;
use crate::theory::{expected_cosine, AnisotropyParams, LengthPair};

/// Orientation of the shared direction `mu`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MuDirection {
    /// `mu = mu_norm * e_axis`.
    #[default]
    FirstAxis,
    /// Gaussian direction drawn from the auxiliary stream of `seed`, rescaled to `mu_norm`.
    Random { seed: u64 },
}

/// The shared direction scaled to `p.mu_norm()`.
pub fn mu_vector(p: &AnisotropyParams, direction: MuDirection) -> Vec<f64> {
    mu_vector_on_axis(p, direction, 0)
}

fn mu_vector_on_axis(p: &AnisotropyParams, direction: MuDirection, axis: usize) -> Vec<f64> {
    let d = p.dim();
    match direction {
        MuDirection::FirstAxis => {
            let mut mu = vec![0.0; d];
            mu[axis % d] = p.mu_norm();
            mu
        }
        MuDirection::Random { seed } => {
            let mut rng = Substreams::new(seed).aux(axis as u64);
            let mut mu: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = mu.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in &mut mu {
                *v *= p.mu_norm() / norm;
            }
            mu
        }
    }
}

/// `length` rows of `mu + sigma * eps`, `eps` i.i.d. standard normal, drawn
/// row-major from `rng`.
pub fn generate_sequence<R: Rng + ?Sized>(
    p: &AnisotropyParams,
    mu: &[f64],
    length: usize,
    rng: &mut R,
) -> Result<TokenMatrix> {
    if mu.len() != p.dim() {
        return Err(Error::Dimension(format!(
            "mu has {} entries for dimension {}",
            mu.len(),
            p.dim()
        )));
    }
    if length == 0 {
        return Err(Error::InvalidInput("sequence length must be >= 1".into()));
    }
    let sigma = p.sigma();
    let mut values = Vec::with_capacity(length * mu.len());
    for _ in 0..length {
        for &m in mu {
            let eps: f64 = StandardNormal.sample(rng);
            values.push(m + sigma * eps);
        }
    }
    TokenMatrix::new(length, mu.len(), values, Vec::new(), 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub params: AnisotropyParams,
    pub n_pairs: usize,
    pub base_length: usize,
    pub ratio_lo: f64,
    pub ratio_hi: f64,
    pub seed: u64,
    pub direction: MuDirection,
}

impl SyntheticConfig {
    /// 200 pairs in 4096 dimensions, `||mu|| = 10`, `sigma = 1`, base length
    /// 100, ratios uniform on `[0.3, 1.0]`.
    pub fn reference(seed: u64) -> Self {
        Self {
            params: AnisotropyParams::new(10.0, 1.0, 4096).expect("valid constants"),
            n_pairs: 200,
            base_length: 100,
            ratio_lo: 0.3,
            ratio_hi: 1.0,
            seed,
            direction: MuDirection::FirstAxis,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ratio_lo > 0.0 && self.ratio_lo <= self.ratio_hi && self.ratio_hi <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "ratio bounds must satisfy 0 < lo <= hi <= 1, got [{}, {}]",
                self.ratio_lo, self.ratio_hi
            )));
        }
        if self.n_pairs == 0 || self.base_length == 0 {
            return Err(Error::InvalidInput("n_pairs and base_length must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRecord {
    pub pair_index: usize,
    pub ratio: f64,
    pub len_a: usize,
    pub len_b: usize,
    pub cosine: f64,
    pub cka: f64,
}

/// Length of the second sequence for drawn ratio `r`.
pub fn partner_length(base_length: usize, ratio: f64) -> usize {
    (base_length as f64 / ratio).floor() as usize
}

/// Draws `n_pairs` independent sequence pairs of lengths `base` and
/// `floor(base / r)`, `r ~ U(ratio_lo, ratio_hi)`, and scores each pair with
/// mean-pooled cosine and with linear CKA over the first `min(len_a, len_b)`
/// rows of both. Pair `i` uses substream `i`; output is ordered by pair index.
pub fn run_synthetic_experiment(cfg: &SyntheticConfig) -> Result<Vec<SyntheticRecord>> {
    cfg.validate()?;
    let mu = mu_vector(&cfg.params, cfg.direction);
    let streams = Substreams::new(cfg.seed);
    (0..cfg.n_pairs)
        .into_par_iter()
        .map(|i| {
            let mut rng = streams.stream(i as u64);
            let u: f64 = rng.random();
            let ratio = cfg.ratio_lo + (cfg.ratio_hi - cfg.ratio_lo) * u;
            let len_a = cfg.base_length;
            let len_b = partner_length(cfg.base_length, ratio);
            let a = generate_sequence(&cfg.params, &mu, len_a, &mut rng)?;
            let b = generate_sequence(&cfg.params, &mu, len_b, &mut rng)?;
            let cos = cosine(&mean_pool(&a), &mean_pool(&b))?;
            let prefix: Vec<usize> = (0..len_a.min(len_b)).collect();
            // undefined (NaN) when a prefix has fewer than 2 rows or no variance
            let cka = if prefix.len() >= 2 {
                match linear_cka(&a.select_rows(&prefix)?, &b.select_rows(&prefix)?) {
                    Err(Error::Degenerate(_)) => f64::NAN,
                    other => other?,
                }
            } else {
                f64::NAN
            };
            Ok(SyntheticRecord {
                pair_index: i,
                ratio,
                len_a,
                len_b,
                cosine: cos,
                cka,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryComparison {
    pub predicted: Vec<f64>,
    /// Empirical minus predicted cosine, per record.
    pub deviations: Vec<f64>,
    pub mean_signed: f64,
    pub max_abs: f64,
}

pub fn compare_to_theory(
    records: &[SyntheticRecord],
    p: &AnisotropyParams,
    base_length: usize,
) -> Result<TheoryComparison> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no records to compare".into()));
    }
    let mut predicted = Vec::with_capacity(records.len());
    let mut deviations = Vec::with_capacity(records.len());
    for r in records {
        if r.len_a != base_length || r.len_b != partner_length(base_length, r.ratio) {
            return Err(Error::ParameterMismatch(format!(
                "pair {} has lengths ({}, {}) inconsistent with base length {base_length} and ratio {}",
                r.pair_index, r.len_a, r.len_b, r.ratio
            )));
        }
        let pred = expected_cosine(p, LengthPair::new(r.len_a, r.len_b)?);
        predicted.push(pred);
        deviations.push(r.cosine - pred);
    }
    let mean_signed = deviations.iter().sum::<f64>() / deviations.len() as f64;
    let max_abs = deviations.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    Ok(TheoryComparison {
        predicted,
        deviations,
        mean_signed,
        max_abs,
    })
}

/// A two-language activation bundle with a planted length artifact.
///
/// Every id has a long `src` sequence of `long_length` tokens and a `tgt`
/// sequence of `floor(long_length * r)` tokens, `r ~ U(ratio_lo, ratio_hi)`.
/// Both start with the same `aligned` unique tokens; the rest are
/// language-specific fillers from a vocabulary whose size is drawn per
/// sequence, so the shared-token fraction varies independently of `r`.
/// Rows at layer `l` are `mu_l + shared_signal * z + sigma * eps`, where
/// `mu_l` lies on axis `l` and `z` is common to both languages at aligned
/// positions only. The aligned count is fixed, so length-invariant metrics
/// see no length signal while mean-pooled cosine does.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub params: AnisotropyParams,
    pub n_ids: usize,
    pub n_layers: usize,
    pub long_length: usize,
    pub aligned: usize,
    pub ratio_lo: f64,
    pub ratio_hi: f64,
    pub shared_signal: f64,
    pub max_depth: f64,
    pub seed: u64,
}

pub const PLANTED_LANGUAGES: [&str; 2] = ["src", "tgt"];

impl PlantedConfig {
    /// 200 ids, 4 layers of width 256, long side 80 tokens with 20 aligned,
    /// ratios on `[0.25, 1]`, `rho = 60`.
    pub fn reference(seed: u64) -> Self {
        let dim = 256;
        Self {
            params: AnisotropyParams::new((dim as f64 / 60.0).sqrt(), 1.0, dim).expect("valid constants"),
            n_ids: 200,
            n_layers: 4,
            long_length: 80,
            aligned: 20,
            ratio_lo: 0.25,
            ratio_hi: 1.0,
            shared_signal: 0.5,
            max_depth: 10.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ratio_lo > 0.0 && self.ratio_lo <= self.ratio_hi && self.ratio_hi <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "ratio bounds must satisfy 0 < lo <= hi <= 1, got [{}, {}]",
                self.ratio_lo, self.ratio_hi
            )));
        }
        if self.aligned < 2 || self.n_ids == 0 || self.n_layers == 0 {
            return Err(Error::InvalidInput("need >= 2 aligned tokens, >= 1 id and >= 1 layer".into()));
        }
        if ((self.long_length as f64 * self.ratio_lo).floor() as usize) < self.aligned {
            return Err(Error::InvalidInput(format!(
                "shortest sequence (ratio {}) would hold fewer than {} aligned tokens",
                self.ratio_lo, self.aligned
            )));
        }
        if !(self.shared_signal.is_finite() && self.shared_signal >= 0.0 && self.max_depth >= 0.0) {
            return Err(Error::InvalidInput("shared signal and max depth must be finite and >= 0".into()));
        }
        Ok(())
    }
}

pub fn planted_bundle(cfg: &PlantedConfig) -> Result<ActivationBundle> {
    cfg.validate()?;
    let p = &cfg.params;
    let d = p.dim();
    let mus: Vec<Vec<f64>> = (0..cfg.n_layers)
        .map(|l| mu_vector_on_axis(p, MuDirection::FirstAxis, l))
        .collect();
    let streams = Substreams::new(cfg.seed);
    let width = cfg.n_ids.to_string().len();

    type Generated = Vec<(Vec<String>, Vec<TokenMatrix>, f64)>;
    let per_id: Vec<Result<Generated>> = (0..cfg.n_ids)
        .into_par_iter()
        .map(|i| {
            let mut rng = streams.stream(i as u64);
            let u: f64 = rng.random();
            let ratio = cfg.ratio_lo + (cfg.ratio_hi - cfg.ratio_lo) * u;
            let lens = [
                cfg.long_length,
                ((cfg.long_length as f64 * ratio).floor() as usize).max(cfg.aligned),
            ];
            // z[l][k]: content shared by aligned token k at layer l
            let z: Vec<Vec<Vec<f64>>> = (0..cfg.n_layers)
                .map(|_| {
                    (0..cfg.aligned)
                        .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
                        .collect()
                })
                .collect();
            let mut out = Vec::with_capacity(2);
            for (lang, &len) in PLANTED_LANGUAGES.iter().zip(&lens) {
                let vocab = rng.random_range(2..=len.max(3));
                let mut tokens: Vec<String> = (0..cfg.aligned).map(|k| format!("w{k}")).collect();
                tokens.extend((cfg.aligned..len).map(|_| format!("{lang}_{}", rng.random_range(0..vocab))));
                let depth = cfg.max_depth * rng.random::<f64>();
                let mut layers = Vec::with_capacity(cfg.n_layers);
                for (l, mu) in mus.iter().enumerate() {
                    let mut values = Vec::with_capacity(len * d);
                    for t in 0..len {
                        for j in 0..d {
                            let eps: f64 = StandardNormal.sample(&mut rng);
                            let shared = if t < cfg.aligned { cfg.shared_signal * z[l][t][j] } else { 0.0 };
                            values.push(mu[j] + shared + p.sigma() * eps);
                        }
                    }
                    layers.push(TokenMatrix::new(len, d, values, Vec::new(), l)?);
                }
                out.push((tokens, layers, depth));
            }
            Ok(out)
        })
        .collect();

    let mut bundle = ActivationBundle::new(cfg.n_layers, d);
    for (i, seqs) in per_id.into_iter().enumerate() {
        let id = format!("id{i:0width$}");
        for (lang, (tokens, layers, depth)) in PLANTED_LANGUAGES.iter().zip(seqs?) {
            bundle.push_sequence(&id, lang, tokens, &layers, Some(depth))?;
        }
    }
    Ok(bundle)
}
