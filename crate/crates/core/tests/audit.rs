use std::fs;

use poolcheck::audit::{run_audit, run_audit_on, AuditConfig, LayerPolicy};
use poolcheck::bundle::{write_bundle, ActivationBundle};
use poolcheck::report::emit_report;
use poolcheck::rng::Substreams;
use poolcheck::stats::CiConfig;
use poolcheck::synthetic::{generate_sequence, planted_bundle, PlantedConfig};
use poolcheck::theory::AnisotropyParams;
use poolcheck::{Error, Metric, TokenMatrix};
use rand::Rng;

fn fisher() -> CiConfig {
    CiConfig::Fisher { level: 0.95 }
}

fn small_planted(seed: u64) -> ActivationBundle {
    let mut cfg = PlantedConfig::reference(seed);
    cfg.n_ids = 60;
    cfg.params = AnisotropyParams::new((64.0f64 / 30.0).sqrt(), 1.0, 64).unwrap();
    planted_bundle(&cfg).unwrap()
}

/// `n_ids` problems in `langs`; `shared(id)` leading tokens are common to all
/// languages and the rest are language-specific.
fn bundle_with(n_ids: usize, langs: &[&str], shared: impl Fn(usize) -> usize, seed: u64) -> ActivationBundle {
    let p = AnisotropyParams::new(2.0, 1.0, 6).unwrap();
    let mu = vec![2.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let mut b = ActivationBundle::new(4, 6);
    for id in 0..n_ids {
        for (li, lang) in langs.iter().enumerate() {
            let mut rng = Substreams::new(seed).stream((id * langs.len() + li) as u64);
            let t = 8 + rng.random_range(0..20);
            let k = shared(id).min(t);
            let tokens: Vec<String> = (0..t)
                .map(|i| if i < k { format!("s{i}") } else { format!("{lang}{i}") })
                .collect();
            let layers: Vec<TokenMatrix> = (0..4)
                .map(|l| generate_sequence(&p, &mu, t, &mut rng).unwrap().with_layer(l))
                .collect();
            b.push_sequence(&format!("p{id:03}"), lang, tokens, &layers, Some(id as f64 % 5.0 + li as f64))
                .unwrap();
        }
    }
    b
}

#[test]
fn planted_gradient_shows_up_in_cosine_only() {
    let b = small_planted(9);
    let mut cfg = AuditConfig::new("unused");
    cfg.ci = fisher();
    let report = run_audit_on(&b, &cfg).unwrap();
    assert!(report.all_fits_succeeded());
    let fit = |m: Metric| report.fits.iter().find(|f| f.metric == m).unwrap().row.clone().unwrap();
    let cos = fit(Metric::MeanPooledCosine);
    assert!(cos.length_only.r2 > 0.5, "{}", cos.length_only.r2);
    assert!(cos.length_only.betas[0] > 0.0);
    assert!(fit(Metric::LinearCka).length_only.r2 < 0.1);
    // the single-predictor beta is the univariate correlation
    for m in Metric::ALL {
        let row = fit(m);
        assert!((row.length_only.betas[0] - row.r_univ).abs() < 1e-10);
    }
}

#[test]
fn identical_languages_give_unit_cka_and_zero_proximity() {
    let mut b = bundle_with(12, &["java", "python"], |_| 100, 3);
    // make java an exact copy of python
    for i in (0..b.len()).step_by(2) {
        b.payloads[i] = b.payloads[i + 1].clone();
        b.manifest.sequences[i].tokens = b.manifest.sequences[i + 1].tokens.clone();
    }
    let mut cfg = AuditConfig::new("unused");
    cfg.ci = fisher();
    let raw = run_audit_on(&b, &cfg).unwrap();
    for r in &raw.records {
        assert!((r.similarity[&Metric::LinearCka] - 1.0).abs() < 1e-9);
        assert!((r.similarity[&Metric::Rv] - 1.0).abs() < 1e-9);
        assert!((r.similarity[&Metric::MeanPooledCosine] - 1.0).abs() < 1e-9);
    }
    cfg.reference = Some("python".into());
    let prox = run_audit_on(&b, &cfg).unwrap();
    assert_eq!(prox.records.len(), 12);
    for r in &prox.records {
        for v in r.similarity.values() {
            assert_eq!(*v, 0.0);
        }
    }
}

#[test]
fn missing_counterpart_names_the_id() {
    let mut b = bundle_with(4, &["c", "python"], |_| 5, 1);
    b.manifest.sequences.pop();
    b.payloads.pop();
    let err = run_audit_on(&b, &AuditConfig::new("unused")).unwrap_err();
    match err {
        Error::MissingCounterpart { id, language } => assert_eq!((id.as_str(), language.as_str()), ("p003", "python")),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn filtered_pairs_are_counted() {
    // every third problem shares only two tokens and fails the k = 3 filter
    let langs = ["c", "java", "python"];
    let b = bundle_with(30, &langs, |id| if id % 3 == 0 { 2 } else { 6 }, 2);
    let mut cfg = AuditConfig::new("unused");
    cfg.ci = fisher();
    let raw = run_audit_on(&b, &cfg).unwrap();
    assert_eq!(raw.included + raw.excluded, 30 * 3);
    assert_eq!(raw.excluded, 10 * 3);
    assert!(raw.excluded_ids.iter().all(|id| id[1..4].parse::<usize>().unwrap() % 3 == 0));

    cfg.reference = Some("python".into());
    let prox = run_audit_on(&b, &cfg).unwrap();
    assert_eq!(prox.included + prox.excluded, 30 * 2);
    assert_eq!(prox.excluded, 10 * 2);
    for r in &prox.records {
        assert!(r.pair_id.contains("|python-"));
    }
}

#[test]
fn rejects_bad_configs() {
    let b = bundle_with(4, &["c", "python"], |_| 5, 1);
    let mut cfg = AuditConfig::new("unused");
    cfg.metrics.clear();
    assert!(run_audit_on(&b, &cfg).is_err());
    let mut cfg = AuditConfig::new("unused");
    cfg.min_shared = 1;
    assert!(run_audit_on(&b, &cfg).is_err());
    let mut cfg = AuditConfig::new("unused");
    cfg.ci = CiConfig::Bootstrap { replicates: 50, seed: 0, level: 0.95 };
    assert!(run_audit_on(&b, &cfg).is_err());
    let mut cfg = AuditConfig::new("unused");
    cfg.reference = Some("cobol".into());
    assert!(run_audit_on(&b, &cfg).is_err());
    let mut cfg = AuditConfig::new("unused");
    cfg.layers = LayerPolicy::Explicit { lo: 2, hi: 9 };
    assert!(run_audit_on(&b, &cfg).is_err());
}

#[test]
fn report_files_are_deterministic_and_shaped() {
    let dir = tempfile::tempdir().unwrap();
    let bundle_dir = dir.path().join("bundle");
    write_bundle(&small_planted(4), &bundle_dir).unwrap();
    let mut cfg = AuditConfig::new(&bundle_dir);
    cfg.ci = CiConfig::Bootstrap { replicates: 200, seed: 7, level: 0.95 };

    let (out1, out2) = (dir.path().join("a"), dir.path().join("b"));
    let files = emit_report(&run_audit(&cfg).unwrap(), &out1).unwrap();
    emit_report(&run_audit(&cfg).unwrap(), &out2).unwrap();
    for f in &files {
        let name = f.file_name().unwrap();
        assert_eq!(fs::read(f).unwrap(), fs::read(out2.join(name)).unwrap(), "{name:?} differs");
    }
    let names: Vec<String> = files.iter().map(|f| f.file_name().unwrap().to_string_lossy().into_owned()).collect();
    for want in ["table_regression.csv", "table_metrics.csv", "table_crossdomain.csv", "table_cka_levels.csv", "fig_cosine.csv", "fig_cka.csv", "fig_rv.csv", "report.json"] {
        assert!(names.iter().any(|n| n == want), "missing {want}");
    }
    let fig = fs::read_to_string(out1.join("fig_cosine.csv")).unwrap();
    assert_eq!(fig.lines().count(), 1 + 60);

    // Table-2 tie as emitted: beta_len_univariate equals r_univ
    let metrics = fs::read_to_string(out1.join("table_metrics.csv")).unwrap();
    for line in metrics.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[6], cells[7], "{line}");
    }

    let mut one = cfg.clone();
    one.metrics = vec![Metric::LinearCka];
    let out3 = dir.path().join("c");
    emit_report(&run_audit(&one).unwrap(), &out3).unwrap();
    let t = fs::read_to_string(out3.join("table_metrics.csv")).unwrap();
    assert_eq!(t.lines().count(), 2);
    assert!(!out3.join("fig_cosine.csv").exists());
}
