use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use poolcheck::align::{SharedFractionMode, DEFAULT_MIN_SHARED};
use poolcheck::audit::{length_only_r2, run_audit, AuditConfig, CrossDomainCell, CrossDomainRow, LayerPolicy};
use poolcheck::bundle::{read_bundle, summarize, write_bundle};
use poolcheck::metrics::{BaselineMode, Centering, LangPair};
use poolcheck::report::{crossdomain_table, emit_report, format_sig6, metrics_table, regression_table};
use poolcheck::stats::{confound_table, CiConfig, SimilarityRecord};
use poolcheck::synthetic::{
    compare_to_theory, planted_bundle, run_synthetic_experiment, MuDirection, PlantedConfig, SyntheticConfig,
};
use poolcheck::theory::{artifact_signal, expected_cosine_rho, taylor_cosine_rho, AnisotropyParams, LengthPair};
use poolcheck::Metric;

#[derive(Parser)]
#[command(name = "poolcheck", version, about = "Audit mean-pooled cosine similarity for sequence-length artifacts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo check of the closed-form cosine prediction on Gaussian sequences.
    Synthetic(SyntheticArgs),
    /// Closed-form expected cosine and its Taylor form over an (m, n, rho) grid.
    Theory(TheoryArgs),
    /// Activation bundle utilities.
    #[command(subcommand)]
    Ingest(IngestCommand),
    /// Similarities, confound regressions and report tables for a bundle.
    Audit(AuditArgs),
    /// Confound regressions on a CSV of similarity records.
    Regress(RegressArgs),
}

#[derive(Args)]
struct SyntheticArgs {
    #[arg(long, default_value_t = 10.0)]
    mu_norm: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 4096)]
    dim: usize,
    #[arg(long, default_value_t = 200)]
    n_pairs: usize,
    #[arg(long, default_value_t = 100)]
    base_length: usize,
    #[arg(long, default_value_t = 0.3)]
    ratio_lo: f64,
    #[arg(long, default_value_t = 1.0)]
    ratio_hi: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Draw the shared direction at random (from the seed) instead of the first axis.
    #[arg(long)]
    random_direction: bool,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TheoryArgs {
    /// Comma-separated lengths of the first sequence.
    #[arg(long, value_delimiter = ',', required = true)]
    m: Vec<usize>,
    /// Comma-separated lengths of the second sequence.
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<usize>,
    /// Comma-separated anisotropy ratios; alternative to --mu-norm/--sigma/--dim.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["mu_norm", "sigma", "dim"])]
    rho: Vec<f64>,
    #[arg(long, requires_all = ["sigma", "dim"])]
    mu_norm: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum IngestCommand {
    /// Check a bundle and print per-sequence shapes and covariate completeness.
    Validate { dir: PathBuf },
    /// Write a two-language bundle with a planted length gradient.
    Synthesize(SynthesizeArgs),
}

#[derive(Args)]
struct SynthesizeArgs {
    dir: PathBuf,
    #[arg(long, default_value_t = 200)]
    n_ids: usize,
    #[arg(long, default_value_t = 4)]
    n_layers: usize,
    #[arg(long, default_value_t = 256)]
    dim: usize,
    #[arg(long, default_value_t = 80)]
    long_length: usize,
    #[arg(long, default_value_t = 20)]
    aligned: usize,
    #[arg(long, default_value_t = 0.25)]
    ratio_lo: f64,
    #[arg(long, default_value_t = 1.0)]
    ratio_hi: f64,
    /// Anisotropy ratio sigma^2 d / ||mu||^2 (sigma = 1).
    #[arg(long, default_value_t = 60.0)]
    rho: f64,
    #[arg(long, default_value_t = 0.5)]
    shared_signal: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum CiKind {
    Bootstrap,
    Fisher,
}

#[derive(Clone, Copy, ValueEnum)]
enum SharedKind {
    Types,
    Occurrences,
}

#[derive(Args)]
struct CiArgs {
    #[arg(long, value_enum, default_value = "bootstrap")]
    ci: CiKind,
    #[arg(long, default_value_t = 5000)]
    replicates: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Seed of the bootstrap resampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl CiArgs {
    fn config(&self) -> Result<CiConfig> {
        if self.replicates < 100 && matches!(self.ci, CiKind::Bootstrap) {
            bail!("bootstrap needs at least 100 replicates, got {}", self.replicates);
        }
        Ok(match self.ci {
            CiKind::Bootstrap => CiConfig::Bootstrap {
                replicates: self.replicates,
                seed: self.seed,
                level: self.level,
            },
            CiKind::Fisher => CiConfig::Fisher { level: self.level },
        })
    }
}

#[derive(Args)]
struct AuditArgs {
    bundle: PathBuf,
    /// Comma-separated subset of cosine, cka, rv.
    #[arg(long, value_delimiter = ',', default_value = "cosine,cka,rv")]
    metrics: Vec<Metric>,
    /// Inclusive layer range `lo:hi`; the middle half of the layers when absent.
    #[arg(long)]
    layers: Option<String>,
    /// Reference language for proximity scores; raw pair similarities when absent.
    #[arg(long)]
    reference: Option<String>,
    #[arg(long, default_value_t = DEFAULT_MIN_SHARED)]
    min_shared: usize,
    #[command(flatten)]
    ci: CiArgs,
    /// Baseline of the proximity score over non-reference languages only.
    #[arg(long)]
    exclude_reference_baseline: bool,
    #[arg(long, value_enum, default_value = "types")]
    shared_fraction: SharedKind,
    /// Skip column centering in the matrix metrics.
    #[arg(long)]
    uncentered: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RegressArgs {
    /// CSV with pair_id, length_ratio, shared_fraction, optional depth_range,
    /// optional pair, and one column per metric (cosine, cka, rv).
    input: PathBuf,
    #[command(flatten)]
    ci: CiArgs,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// `Ok(false)` when the run completed but some fit failed.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Synthetic(a) => synthetic(a).map(|_| true),
        Command::Theory(a) => theory(a).map(|_| true),
        Command::Ingest(IngestCommand::Validate { dir }) => validate(&dir).map(|_| true),
        Command::Ingest(IngestCommand::Synthesize(a)) => synthesize(a).map(|_| true),
        Command::Audit(a) => audit(a),
        Command::Regress(a) => regress(a),
    }
}

fn write_output(out: Option<&Path>, body: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, body).with_context(|| format!("writing {}", path.display())),
        None => std::io::stdout().write_all(body.as_bytes()).context("writing to stdout"),
    }
}

fn synthetic(a: SyntheticArgs) -> Result<()> {
    let params = AnisotropyParams::new(a.mu_norm, a.sigma, a.dim)?;
    let cfg = SyntheticConfig {
        params,
        n_pairs: a.n_pairs,
        base_length: a.base_length,
        ratio_lo: a.ratio_lo,
        ratio_hi: a.ratio_hi,
        seed: a.seed,
        direction: if a.random_direction {
            MuDirection::Random { seed: a.seed }
        } else {
            MuDirection::FirstAxis
        },
    };
    let records = run_synthetic_experiment(&cfg)?;
    let cmp = compare_to_theory(&records, &params, cfg.base_length)?;
    let mut body = String::from("pair_index,ratio,len_a,len_b,cosine,cka,predicted_cosine,deviation\n");
    for ((r, p), d) in records.iter().zip(&cmp.predicted).zip(&cmp.deviations) {
        let _ = writeln!(
            body,
            "{},{},{},{},{},{},{},{}",
            r.pair_index,
            format_sig6(r.ratio),
            r.len_a,
            r.len_b,
            format_sig6(r.cosine),
            format_sig6(r.cka),
            format_sig6(*p),
            format_sig6(*d)
        );
    }
    write_output(a.out.as_deref(), &body)?;
    eprintln!(
        "mean signed deviation {}, max |deviation| {}",
        format_sig6(cmp.mean_signed),
        format_sig6(cmp.max_abs)
    );
    Ok(())
}

fn theory(a: TheoryArgs) -> Result<()> {
    let rhos = match (a.mu_norm, a.sigma, a.dim) {
        (Some(mu), Some(sigma), Some(dim)) => {
            vec![poolcheck::theory::anisotropy_ratio(&AnisotropyParams::new(mu, sigma, dim)?)]
        }
        _ if !a.rho.is_empty() => a.rho.clone(),
        _ => bail!("give either --rho or all of --mu-norm, --sigma and --dim"),
    };
    for &rho in &rhos {
        if !(rho.is_finite() && rho >= 0.0) {
            bail!("rho must be finite and >= 0, got {rho}");
        }
    }
    let mut body = String::from("rho,m,n,expected_cosine,taylor_cosine,artifact_signal\n");
    for &rho in &rhos {
        for &m in &a.m {
            for &n in &a.n {
                let len = LengthPair::new(m, n)?;
                let _ = writeln!(
                    body,
                    "{},{m},{n},{},{},{}",
                    format_sig6(rho),
                    format_sig6(expected_cosine_rho(rho, len)),
                    format_sig6(taylor_cosine_rho(rho, len)),
                    format_sig6(artifact_signal(len))
                );
            }
        }
    }
    write_output(a.out.as_deref(), &body)
}

fn validate(dir: &Path) -> Result<()> {
    let bundle = read_bundle(dir)?;
    let summary = summarize(&bundle);
    let mut out = String::from("id,language,rows,cols,token_count,has_depth\n");
    for s in &summary {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            s.id, s.language, s.rows, s.cols, s.token_count, s.has_depth
        );
    }
    let with_depth = summary.iter().filter(|s| s.has_depth).count();
    let languages: BTreeSet<&str> = summary.iter().map(|s| s.language.as_str()).collect();
    print!("{out}");
    eprintln!(
        "ok: {} sequences, {} languages, {} layers, d = {}; depth present for {with_depth}/{}",
        summary.len(),
        languages.len(),
        bundle.manifest.n_layers,
        bundle.manifest.hidden_dim,
        summary.len()
    );
    Ok(())
}

fn synthesize(a: SynthesizeArgs) -> Result<()> {
    if !(a.rho > 0.0 && a.rho.is_finite()) {
        bail!("rho must be positive, got {}", a.rho);
    }
    let cfg = PlantedConfig {
        params: AnisotropyParams::new((a.dim as f64 / a.rho).sqrt(), 1.0, a.dim)?,
        n_ids: a.n_ids,
        n_layers: a.n_layers,
        long_length: a.long_length,
        aligned: a.aligned,
        ratio_lo: a.ratio_lo,
        ratio_hi: a.ratio_hi,
        shared_signal: a.shared_signal,
        max_depth: 10.0,
        seed: a.seed,
    };
    let bundle = planted_bundle(&cfg)?;
    write_bundle(&bundle, &a.dir)?;
    eprintln!("wrote {} sequences to {}", bundle.len(), a.dir.display());
    Ok(())
}

fn parse_layers(s: &str) -> Result<LayerPolicy> {
    let (lo, hi) = s.split_once(':').context("layer range must look like `lo:hi`")?;
    Ok(LayerPolicy::Explicit {
        lo: lo.trim().parse().context("layer range lower bound")?,
        hi: hi.trim().parse().context("layer range upper bound")?,
    })
}

fn audit(a: AuditArgs) -> Result<bool> {
    let mut cfg = AuditConfig::new(&a.bundle);
    cfg.metrics = a.metrics;
    if let Some(l) = &a.layers {
        cfg.layers = parse_layers(l)?;
    }
    cfg.reference = a.reference;
    cfg.min_shared = a.min_shared;
    cfg.ci = a.ci.config()?;
    if a.exclude_reference_baseline {
        cfg.baseline = BaselineMode::ExcludeReference;
    }
    cfg.shared_fraction = match a.shared_fraction {
        SharedKind::Types => SharedFractionMode::Types,
        SharedKind::Occurrences => SharedFractionMode::Occurrences,
    };
    if a.uncentered {
        cfg.centering = Centering::Uncentered;
    }
    cfg.output_dir = Some(a.out.clone());

    let report = run_audit(&cfg)?;
    emit_report(&report, &a.out)?;
    eprintln!(
        "{} records ({} included, {} excluded by the shared-token filter) written to {}",
        report.records.len(),
        report.included,
        report.excluded,
        a.out.display()
    );
    for f in &report.fits {
        if let Some(e) = &f.error {
            eprintln!("{} fit failed: {e}", f.metric);
        }
    }
    for cell in report.crossdomain.iter().flat_map(|r| &r.cells) {
        if let Some(e) = &cell.error {
            eprintln!("{} cross-domain fit failed: {e}", cell.metric);
        }
    }
    Ok(report.all_fits_succeeded())
}

/// Records plus their optional language-pair labels.
fn read_records(path: &Path) -> Result<(Vec<SimilarityRecord>, Vec<Option<LangPair>>, Vec<Metric>)> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let required = |name: &str| col(name).with_context(|| format!("{}: missing column `{name}`", path.display()));
    let id_col = required("pair_id")?;
    let ratio_col = required("length_ratio")?;
    let shared_col = required("shared_fraction")?;
    let depth_col = col("depth_range");
    let pair_col = col("pair");
    let metric_cols: Vec<(Metric, usize)> = Metric::ALL
        .iter()
        .filter_map(|&m| col(m.name()).map(|i| (m, i)))
        .collect();
    if metric_cols.is_empty() {
        bail!("{}: no similarity column (cosine, cka or rv)", path.display());
    }

    let mut records = Vec::new();
    let mut pairs = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        let num = |i: usize, what: &str| -> Result<f64> {
            row[i]
                .trim()
                .parse::<f64>()
                .with_context(|| format!("row {}: bad {what} `{}`", line + 2, &row[i]))
        };
        let depth = match depth_col {
            Some(i) if !row[i].trim().is_empty() => Some(num(i, "depth_range")?),
            _ => None,
        };
        let mut similarity = BTreeMap::new();
        for &(m, i) in &metric_cols {
            similarity.insert(m, num(i, m.name())?);
        }
        pairs.push(match pair_col {
            Some(i) => {
                let (x, y) = row[i]
                    .split_once('-')
                    .with_context(|| format!("row {}: pair must look like `a-b`", line + 2))?;
                Some(LangPair::new(x, y))
            }
            None => None,
        });
        records.push(SimilarityRecord {
            pair_id: row[id_col].to_owned(),
            similarity,
            length_ratio: num(ratio_col, "length_ratio")?,
            depth_range: depth,
            shared_fraction: num(shared_col, "shared_fraction")?,
            lengths: None,
        });
    }
    Ok((records, pairs, metric_cols.into_iter().map(|(m, _)| m).collect()))
}

fn regress(a: RegressArgs) -> Result<bool> {
    let ci = a.ci.config()?;
    let (records, pairs, metrics) = read_records(&a.input)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let mut ok = true;
    let mut rows = Vec::new();
    for &m in &metrics {
        match confound_table(&records, m, ci) {
            Ok(r) => rows.push(r),
            Err(e) => {
                eprintln!("{m} fit failed: {e}");
                ok = false;
            }
        }
    }

    let mut groups: BTreeMap<LangPair, Vec<SimilarityRecord>> = BTreeMap::new();
    for (r, p) in records.iter().zip(&pairs) {
        if let Some(p) = p {
            groups.entry(p.clone()).or_default().push(r.clone());
        }
    }
    let crossdomain: Vec<CrossDomainRow> = groups
        .into_iter()
        .map(|(pair, recs)| CrossDomainRow {
            n: recs.len(),
            cells: metrics
                .iter()
                .map(|&metric| match length_only_r2(&recs, metric, ci) {
                    Ok((r2, iv)) => CrossDomainCell { metric, r2: Some(r2), ci: Some(iv), error: None },
                    Err(e) => {
                        eprintln!("{pair} {metric} fit failed: {e}");
                        ok = false;
                        CrossDomainCell { metric, r2: None, ci: None, error: Some(e.to_string()) }
                    }
                })
                .collect(),
            pair,
        })
        .collect();

    let files = [
        ("table_regression.csv", regression_table(&rows)),
        ("table_metrics.csv", metrics_table(&rows)),
        ("table_crossdomain.csv", crossdomain_table(&metrics, &crossdomain)),
        (
            "regression.json",
            serde_json::to_string_pretty(&serde_json::json!({
                "n_records": records.len(),
                "fits": rows,
                "crossdomain": crossdomain,
            }))? + "\n",
        ),
    ];
    for (name, body) in files {
        let path = a.out.join(name);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    }
    eprintln!("{} records, {} metric fits written to {}", records.len(), rows.len(), a.out.display());
    Ok(ok)
}
