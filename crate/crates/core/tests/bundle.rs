use std::fs;
use std::path::Path;

use poolcheck::bundle::{read_bundle, write_bundle, ActivationBundle, Payload, HEADER_LEN, MANIFEST_FILE};
use poolcheck::rng::Substreams;
use poolcheck::{BundleError, TokenMatrix};
use rand::Rng;

/// Random values pass through f32, so the written payload is what we compare.
fn random_bundle(seed: u64) -> ActivationBundle {
    let mut rng = Substreams::new(seed).stream(0);
    let (n_layers, d) = (3, 5);
    let mut b = ActivationBundle::new(n_layers, d);
    for id in 0..4 {
        for (li, lang) in ["c", "python"].iter().enumerate() {
            let t = rng.random_range(1..12);
            let tokens: Vec<String> = (0..t).map(|k| format!("tok{}", (k * 3 + li) % 5)).collect();
            let layers: Vec<TokenMatrix> = (0..n_layers)
                .map(|l| {
                    let vals = (0..t * d).map(|_| rng.random::<f32>() as f64 * 8.0 - 4.0).collect();
                    TokenMatrix::new(t, d, vals, vec![], l).unwrap()
                })
                .collect();
            let depth = (id % 2 == 0).then(|| rng.random_range(1..9) as f64);
            b.push_sequence(&format!("prob/{id}"), lang, tokens, &layers, depth).unwrap();
        }
    }
    b
}

fn first_file(dir: &Path, b: &ActivationBundle) -> std::path::PathBuf {
    dir.join(&b.manifest.sequences[0].file)
}

#[test]
fn round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let b = random_bundle(1);
    write_bundle(&b, dir.path()).unwrap();
    let back = read_bundle(dir.path()).unwrap();
    assert_eq!(back.manifest, b.manifest);
    for (x, y) in back.payloads.iter().zip(&b.payloads) {
        assert_eq!(x.encode(), y.encode());
        let bits = |p: &Payload| p.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(x), bits(y));
    }
    // rewriting yields identical bytes on disk
    let again = tempfile::tempdir().unwrap();
    write_bundle(&back, again.path()).unwrap();
    for e in &b.manifest.sequences {
        assert_eq!(fs::read(dir.path().join(&e.file)).unwrap(), fs::read(again.path().join(&e.file)).unwrap());
    }
    assert_eq!(
        fs::read(dir.path().join(MANIFEST_FILE)).unwrap(),
        fs::read(again.path().join(MANIFEST_FILE)).unwrap()
    );
}

#[test]
fn header_layout_is_little_endian() {
    let p = Payload { n_layers: 2, rows: 3, cols: 1, values: vec![1.0, -2.0, 0.5, 0.0, 3.25, 7.0] };
    let bytes = p.encode();
    assert_eq!(&bytes[..6], b"LVAR1\0");
    assert_eq!(&bytes[6..10], &1u32.to_le_bytes());
    assert_eq!(&bytes[10..14], &2u32.to_le_bytes());
    assert_eq!(&bytes[14..18], &3u32.to_le_bytes());
    assert_eq!(&bytes[18..22], &1u32.to_le_bytes());
    assert_eq!(&bytes[22..26], &1.0f32.to_le_bytes());
    assert_eq!(bytes.len(), HEADER_LEN + 4 * 6);
}

#[test]
fn corrupt_magic_names_offset_zero() {
    let dir = tempfile::tempdir().unwrap();
    let b = random_bundle(2);
    write_bundle(&b, dir.path()).unwrap();
    let path = first_file(dir.path(), &b);
    let mut bytes = fs::read(&path).unwrap();
    bytes[0] = b'X';
    fs::write(&path, bytes).unwrap();
    let err = read_bundle(dir.path()).unwrap_err();
    assert!(matches!(err, BundleError::BadMagic { .. }), "{err}");
    assert!(err.to_string().contains("offset 0"));
}

#[test]
fn truncated_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let b = random_bundle(3);
    write_bundle(&b, dir.path()).unwrap();
    let path = first_file(dir.path(), &b);
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    match read_bundle(dir.path()).unwrap_err() {
        BundleError::Truncated { expected, actual, .. } => assert_eq!(expected, actual + 3),
        other => panic!("unexpected {other}"),
    }
    fs::write(&path, &bytes[..10]).unwrap();
    assert!(matches!(read_bundle(dir.path()).unwrap_err(), BundleError::Truncated { .. }));
}

#[test]
fn trailing_bytes_and_unknown_version_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let b = random_bundle(4);
    write_bundle(&b, dir.path()).unwrap();
    let path = first_file(dir.path(), &b);
    let good = fs::read(&path).unwrap();
    let mut longer = good.clone();
    longer.extend_from_slice(&[0, 0]);
    fs::write(&path, longer).unwrap();
    assert!(matches!(read_bundle(dir.path()).unwrap_err(), BundleError::TrailingData { extra: 2, .. }));
    let mut v2 = good;
    v2[6..10].copy_from_slice(&2u32.to_le_bytes());
    fs::write(&path, v2).unwrap();
    assert!(matches!(read_bundle(dir.path()).unwrap_err(), BundleError::UnsupportedVersion { version: 2, .. }));
}

#[test]
fn row_count_disagreeing_with_manifest_names_the_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = random_bundle(5);
    // manifest says one more token than the file holds rows
    b.manifest.sequences[2].tokens.push("extra".into());
    let entry = b.manifest.sequences[2].clone();
    b.manifest.sequences[2].tokens.pop();
    write_bundle(&b, dir.path()).unwrap();
    let mut manifest = b.manifest.clone();
    manifest.sequences[2] = entry.clone();
    fs::write(dir.path().join(MANIFEST_FILE), serde_json::to_string(&manifest).unwrap()).unwrap();
    let err = read_bundle(dir.path()).unwrap_err();
    match &err {
        BundleError::DimensionMismatch { id, field, declared, found, .. } => {
            assert_eq!(id, &entry.id);
            assert_eq!(*field, "T");
            assert_eq!(*declared, found + 1);
        }
        other => panic!("unexpected {other}"),
    }
    assert!(err.to_string().contains(&entry.id));
}

#[test]
fn non_finite_value_is_located() {
    let dir = tempfile::tempdir().unwrap();
    let b = random_bundle(6);
    write_bundle(&b, dir.path()).unwrap();
    let path = first_file(dir.path(), &b);
    let p = &b.payloads[0];
    let mut bytes = fs::read(&path).unwrap();
    // layer 1, row 0, column 2
    let at = HEADER_LEN + 4 * (p.rows * p.cols + 2);
    bytes[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    fs::write(&path, bytes).unwrap();
    match read_bundle(dir.path()).unwrap_err() {
        BundleError::NonFinite { layer, row, col, .. } => assert_eq!((layer, row, col), (1, 0, 2)),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn missing_file_and_bad_json_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(read_bundle(dir.path()).unwrap_err(), BundleError::Io { .. }));
    fs::write(dir.path().join(MANIFEST_FILE), "{ not json").unwrap();
    assert!(matches!(read_bundle(dir.path()).unwrap_err(), BundleError::Json { .. }));
}
