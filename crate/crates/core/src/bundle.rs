//! Activation bundles: a JSON manifest plus one binary matrix file per
//! sequence.
//!
//! Matrix file layout (all little-endian):
//!
//! ```text
//! offset  size  field
//! 0       6     magic "LVAR1\0"
//! 6       4     u32 version (= 1)
//! 10      4     u32 n_layers
//! 14      4     u32 T (token positions)
//! 18      4     u32 d (hidden dimension)
//! 22      4*N   f32 values, N = n_layers * T * d, layer-major then row-major
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{BundleError, Error, Result};
use crate::repr::TokenMatrix;

pub const MAGIC: &[u8; 6] = b"LVAR1\0";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 22;
pub const MANIFEST_FILE: &str = "manifest.json";

type BundleResult<T> = std::result::Result<T, BundleError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceEntry {
    /// Parallel-corpus item id, shared by every language's version of the item.
    pub id: String,
    pub language: String,
    pub tokens: Vec<String>,
    /// Matrix file, relative to the bundle directory.
    pub file: String,
    /// Precomputed syntax-tree depth, when available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub sequences: Vec<SequenceEntry>,
}

impl Manifest {
    pub fn new(n_layers: usize, hidden_dim: usize) -> Self {
        Self {
            format: "LVAR1".into(),
            n_layers,
            hidden_dim,
            sequences: Vec::new(),
        }
    }
}

/// `n_layers x rows x cols` activations of one sequence, kept at storage precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Payload {
    pub n_layers: usize,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
}

impl Payload {
    pub fn layer(&self, layer: usize) -> &[f32] {
        let size = self.rows * self.cols;
        &self.values[layer * size..(layer + 1) * size]
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.values.len());
        out.extend_from_slice(MAGIC);
        for v in [FORMAT_VERSION, self.n_layers as u32, self.rows as u32, self.cols as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses a matrix file; `path` only labels errors.
    pub fn decode(bytes: &[u8], path: &Path) -> BundleResult<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(BundleError::BadMagic { path: path.to_owned() });
        }
        if bytes.len() < HEADER_LEN {
            return Err(BundleError::Truncated {
                path: path.to_owned(),
                expected: HEADER_LEN as u64,
                actual: bytes.len() as u64,
            });
        }
        let field = |i: usize| {
            let at = MAGIC.len() + 4 * i;
            u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
        };
        let version = field(0);
        if version != FORMAT_VERSION {
            return Err(BundleError::UnsupportedVersion {
                path: path.to_owned(),
                version,
            });
        }
        let (n_layers, rows, cols) = (field(1) as usize, field(2) as usize, field(3) as usize);
        let expected = HEADER_LEN as u64 + 4 * (n_layers as u64) * (rows as u64) * (cols as u64);
        let actual = bytes.len() as u64;
        if actual < expected {
            return Err(BundleError::Truncated {
                path: path.to_owned(),
                expected,
                actual,
            });
        }
        if actual > expected {
            return Err(BundleError::TrailingData {
                path: path.to_owned(),
                extra: actual - expected,
            });
        }
        let values = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect();
        Ok(Self {
            n_layers,
            rows,
            cols,
            values,
        })
    }
}

/// A manifest and the matrices it references, index-aligned with
/// `manifest.sequences`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationBundle {
    pub manifest: Manifest,
    pub payloads: Vec<Payload>,
}

impl ActivationBundle {
    pub fn new(n_layers: usize, hidden_dim: usize) -> Self {
        Self {
            manifest: Manifest::new(n_layers, hidden_dim),
            payloads: Vec::new(),
        }
    }

    /// Appends a sequence from per-layer matrices; the file name is derived
    /// from the id and language.
    pub fn push_sequence(
        &mut self,
        id: &str,
        language: &str,
        tokens: Vec<String>,
        layers: &[TokenMatrix],
        depth: Option<f64>,
    ) -> Result<()> {
        if layers.len() != self.manifest.n_layers {
            return Err(Error::Dimension(format!(
                "{id} ({language}): {} layers, bundle has {}",
                layers.len(),
                self.manifest.n_layers
            )));
        }
        let rows = tokens.len();
        let cols = self.manifest.hidden_dim;
        let mut values = Vec::with_capacity(layers.len() * rows * cols);
        for m in layers {
            if m.rows() != rows || m.cols() != cols {
                return Err(Error::Dimension(format!(
                    "{id} ({language}): layer {} is {}x{}, expected {rows}x{cols}",
                    m.layer_index(),
                    m.rows(),
                    m.cols()
                )));
            }
            values.extend(m.values().iter().map(|&v| v as f32));
        }
        let file = format!(
            "{:05}_{}.{}.lvar",
            self.payloads.len(),
            sanitize(id),
            sanitize(language)
        );
        self.manifest.sequences.push(SequenceEntry {
            id: id.to_owned(),
            language: language.to_owned(),
            tokens,
            file,
            depth,
        });
        self.payloads.push(Payload {
            n_layers: layers.len(),
            rows,
            cols,
            values,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.payloads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payloads.is_empty()
    }

    /// Layer `layer` of sequence `seq` as an `f64` token matrix carrying the tokens.
    pub fn layer_matrix(&self, seq: usize, layer: usize) -> Result<TokenMatrix> {
        let p = &self.payloads[seq];
        if layer >= p.n_layers {
            return Err(Error::InvalidInput(format!(
                "layer {layer} out of range for {} layers",
                p.n_layers
            )));
        }
        let values = p.layer(layer).iter().map(|&v| f64::from(v)).collect();
        TokenMatrix::new(
            p.rows,
            p.cols,
            values,
            self.manifest.sequences[seq].tokens.clone(),
            layer,
        )
    }

    /// Checks that every payload agrees with the manifest and holds finite values.
    pub fn validate(&self) -> BundleResult<()> {
        let m = &self.manifest;
        if m.format != "LVAR1" {
            return Err(BundleError::Manifest(format!("unknown format `{}`", m.format)));
        }
        if self.payloads.len() != m.sequences.len() {
            return Err(BundleError::Manifest(format!(
                "{} sequences but {} payloads",
                m.sequences.len(),
                self.payloads.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for (entry, p) in m.sequences.iter().zip(&self.payloads) {
            if !seen.insert((entry.id.as_str(), entry.language.as_str())) {
                return Err(BundleError::Manifest(format!(
                    "duplicate sequence `{}` ({})",
                    entry.id, entry.language
                )));
            }
            let mismatch = |field, declared, found| BundleError::DimensionMismatch {
                id: entry.id.clone(),
                language: entry.language.clone(),
                field,
                declared,
                found,
            };
            if p.rows != entry.tokens.len() {
                return Err(mismatch("T", entry.tokens.len(), p.rows));
            }
            if p.cols != m.hidden_dim {
                return Err(mismatch("d", m.hidden_dim, p.cols));
            }
            if p.n_layers != m.n_layers {
                return Err(mismatch("n_layers", m.n_layers, p.n_layers));
            }
            if p.rows == 0 {
                return Err(mismatch("T", entry.tokens.len(), 0));
            }
            if let Some(pos) = p.values.iter().position(|v| !v.is_finite()) {
                let per_layer = p.rows * p.cols;
                return Err(BundleError::NonFinite {
                    id: entry.id.clone(),
                    language: entry.language.clone(),
                    layer: pos / per_layer,
                    row: (pos % per_layer) / p.cols,
                    col: pos % p.cols,
                });
            }
        }
        Ok(())
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BundleError + '_ {
    move |source| BundleError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Reads and validates the bundle rooted at `dir`.
pub fn read_bundle(dir: &Path) -> BundleResult<ActivationBundle> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|source| BundleError::Json {
        path: manifest_path.clone(),
        source,
    })?;
    let payloads = manifest
        .sequences
        .iter()
        .map(|entry| {
            let path: PathBuf = dir.join(&entry.file);
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            Payload::decode(&bytes, &path)
        })
        .collect::<BundleResult<Vec<_>>>()?;
    let bundle = ActivationBundle { manifest, payloads };
    bundle.validate()?;
    Ok(bundle)
}

/// Writes the manifest and every matrix file into `dir`, creating it if needed.
pub fn write_bundle(bundle: &ActivationBundle, dir: &Path) -> BundleResult<()> {
    bundle.validate()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (entry, payload) in bundle.manifest.sequences.iter().zip(&bundle.payloads) {
        let path = dir.join(&entry.file);
        let mut f = fs::File::create(&path).map_err(io_err(&path))?;
        f.write_all(&payload.encode()).map_err(io_err(&path))?;
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&bundle.manifest).map_err(|source| BundleError::Json {
        path: manifest_path.clone(),
        source,
    })?;
    fs::write(&manifest_path, text + "\n").map_err(io_err(&manifest_path))
}

/// Per-sequence line of `ingest validate`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceSummary {
    pub id: String,
    pub language: String,
    pub rows: usize,
    pub cols: usize,
    pub token_count: usize,
    pub has_depth: bool,
}

pub fn summarize(bundle: &ActivationBundle) -> Vec<SequenceSummary> {
    bundle
        .manifest
        .sequences
        .iter()
        .zip(&bundle.payloads)
        .map(|(e, p)| SequenceSummary {
            id: e.id.clone(),
            language: e.language.clone(),
            rows: p.rows,
            cols: p.cols,
            token_count: e.tokens.len(),
            has_depth: e.depth.is_some(),
        })
        .collect()
}
