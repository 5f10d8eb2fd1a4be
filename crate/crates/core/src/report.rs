//! CSV tables, figure data and the JSON roll-up for an audit report.
//!
//! Numbers are written with six significant digits in a fixed,
//! locale-independent form so that repeated runs produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::audit::{AuditReport, CrossDomainRow};
use crate::error::{BundleError, Error, Result};
use crate::metrics::Metric;
use crate::stats::{ConfoundRow, DEPTH_RANGE, LENGTH_RATIO, SHARED_FRACTION};

/// Six significant digits: fixed notation for magnitudes in `[1e-5, 1e6)`,
/// exponent notation otherwise.
pub fn format_sig6(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "NaN".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0.00000".into();
    }
    let sci = format!("{x:.5e}");
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..].parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        format!("{:.*}", (5 - exp) as usize, x)
    } else {
        sci
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(format_sig6).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Table-1 shape: length-only R² with its interval, full-model R² and betas.
pub fn regression_table<'a>(rows: impl IntoIterator<Item = &'a ConfoundRow>) -> String {
    let mut out = String::from(
        "metric,n,r2_length_only,r2_length_ci_lo,r2_length_ci_hi,ci_method,r2_full,beta_len,beta_depth,beta_shared,p_len_proxy\n",
    );
    for r in rows {
        let p_len = r
            .full
            .p_proxy
            .as_ref()
            .and_then(|p| r.full.predictors.iter().position(|n| n == LENGTH_RATIO).map(|i| p[i]));
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.metric,
            r.n,
            format_sig6(r.length_only.r2),
            format_sig6(r.r2_length_ci.lo),
            format_sig6(r.r2_length_ci.hi),
            match r.r2_length_ci.method {
                crate::stats::CiMethod::Bootstrap => "bootstrap",
                crate::stats::CiMethod::Fisher => "fisher",
            },
            format_sig6(r.full.r2),
            opt(r.full.beta(LENGTH_RATIO)),
            opt(r.full.beta(DEPTH_RANGE)),
            opt(r.full.beta(SHARED_FRACTION)),
            opt(p_len),
        );
    }
    out
}

/// Table-2 shape: one row per metric with the full-model fit and the
/// univariate correlation with length ratio.
pub fn metrics_table<'a>(rows: impl IntoIterator<Item = &'a ConfoundRow>) -> String {
    let mut out = String::from("metric,n,r2_full,beta_len,beta_depth,beta_shared,r_univ,beta_len_univariate\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.metric,
            r.n,
            format_sig6(r.full.r2),
            opt(r.full.beta(LENGTH_RATIO)),
            opt(r.full.beta(DEPTH_RANGE)),
            opt(r.full.beta(SHARED_FRACTION)),
            format_sig6(r.r_univ),
            opt(r.length_only.beta(LENGTH_RATIO)),
        );
    }
    out
}

/// Table-4 shape: length-only R² and interval per language pair and metric.
pub fn crossdomain_table(metrics: &[Metric], rows: &[CrossDomainRow]) -> String {
    let mut out = String::from("pair,n");
    for m in metrics {
        let _ = write!(out, ",{m}_r2,{m}_ci_lo,{m}_ci_hi");
    }
    out.push_str(",ci_method\n");
    for row in rows {
        let _ = write!(out, "{},{}", csv_field(&row.pair.to_string()), row.n);
        let mut method = "";
        for cell in &row.cells {
            let (lo, hi) = cell.ci.as_ref().map_or((None, None), |c| (Some(c.lo), Some(c.hi)));
            let _ = write!(out, ",{},{},{}", opt(cell.r2), opt(lo), opt(hi));
            if let Some(c) = &cell.ci {
                method = match c.method {
                    crate::stats::CiMethod::Bootstrap => "bootstrap",
                    crate::stats::CiMethod::Fisher => "fisher",
                };
            }
        }
        let _ = writeln!(out, ",{method}");
    }
    out
}

fn cka_levels_table(report: &AuditReport) -> String {
    let mut out = String::from("pair,mean_cka,std_cka,n\n");
    for l in &report.cka_levels {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            csv_field(&l.pair.to_string()),
            format_sig6(l.mean),
            format_sig6(l.std),
            l.n
        );
    }
    out
}

fn figure_table(report: &AuditReport, metric: Metric) -> String {
    let mut out = String::from("pair_id,similarity,length_ratio,depth_range,shared_fraction\n");
    for r in &report.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            csv_field(&r.pair_id),
            opt(r.similarity.get(&metric).copied()),
            format_sig6(r.length_ratio),
            opt(r.depth_range),
            format_sig6(r.shared_fraction),
        );
    }
    out
}

/// Writes every table, one figure-data file per metric and `report.json`
/// into `dir`. Returns the written paths in a fixed order.
pub fn emit_report(report: &AuditReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let io = |path: &Path| {
        let path = path.to_owned();
        move |source| Error::Bundle(BundleError::Io { path, source })
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let rows: Vec<&ConfoundRow> = report.fits.iter().filter_map(|f| f.row.as_ref()).collect();

    let mut files: Vec<(String, String)> = vec![
        ("table_regression.csv".into(), regression_table(rows.iter().copied())),
        ("table_metrics.csv".into(), metrics_table(rows.iter().copied())),
        ("table_crossdomain.csv".into(), crossdomain_table(&report.metrics, &report.crossdomain)),
        ("table_cka_levels.csv".into(), cka_levels_table(report)),
    ];
    for &m in &report.metrics {
        files.push((format!("fig_{m}.csv"), figure_table(report, m)));
    }
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::InvalidInput(e.to_string()))?;
    files.push(("report.json".into(), json + "\n"));

    let mut written = Vec::with_capacity(files.len());
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io(&path))?;
        written.push(path);
    }
    Ok(written)
}
