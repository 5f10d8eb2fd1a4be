//! Token-level representations, pooling operators and layer selection.
//!
//! Everything here is computed in `f64`, regardless of the storage precision
//! of the source activations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden states of one sequence at one layer: `rows` token positions by
/// `cols` hidden dimensions, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    values: Vec<f64>,
    rows: usize,
    cols: usize,
    tokens: Vec<String>,
    layer_index: usize,
}

impl TokenMatrix {
    /// Builds a matrix from row-major values.
    ///
    /// `tokens` must be empty or hold exactly one surface form per row. Any
    /// non-finite entry is rejected with its row and column.
    pub fn new(
        rows: usize,
        cols: usize,
        values: Vec<f64>,
        tokens: Vec<String>,
        layer_index: usize,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput(format!(
                "token matrix must be at least 1x1, got {rows}x{cols}"
            )));
        }
        if values.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "expected {} values for {rows}x{cols}, got {}",
                rows * cols,
                values.len()
            )));
        }
        if !tokens.is_empty() && tokens.len() != rows {
            return Err(Error::Dimension(format!(
                "{} tokens for {rows} rows",
                tokens.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / cols,
                col: pos % cols,
            });
        }
        Ok(Self {
            values,
            rows,
            cols,
            tokens,
            layer_index,
        })
    }

    /// Builds a token-less matrix from a slice of rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::Dimension(format!(
                "row {bad} has {} columns, expected {cols}",
                rows[bad].len()
            )));
        }
        let values = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), cols, values, Vec::new(), 0)
    }

    pub fn with_layer(mut self, layer_index: usize) -> Self {
        self.layer_index = layer_index;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn layer_index(&self) -> usize {
        self.layer_index
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.cols..(t + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.cols)
    }

    /// Materializes the rows at `indices`, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidInput("row selection is empty".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.rows) {
            return Err(Error::Dimension(format!(
                "row index {bad} out of range for {} rows",
                self.rows
            )));
        }
        let mut values = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        let tokens = if self.tokens.is_empty() {
            Vec::new()
        } else {
            indices.iter().map(|&i| self.tokens[i].clone()).collect()
        };
        Ok(Self {
            values,
            rows: indices.len(),
            cols: self.cols,
            tokens,
            layer_index: self.layer_index,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pooling {
    Mean,
    LastToken,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledVector {
    pub values: Vec<f64>,
    pub source_length: usize,
    pub pooling: Pooling,
}

impl PooledVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

// Rows per leaf block of the pairwise reduction.
const PAIRWISE_BLOCK: usize = 8;

/// Column means of `m`, accumulated with pairwise (tree) summation over rows.
pub fn mean_pool(m: &TokenMatrix) -> PooledVector {
    let mut sums = vec![0.0; m.cols];
    pairwise_row_sum(m, 0, m.rows, &mut sums);
    let count = m.rows as f64;
    for s in &mut sums {
        *s /= count;
    }
    PooledVector {
        values: sums,
        source_length: m.rows,
        pooling: Pooling::Mean,
    }
}

fn pairwise_row_sum(m: &TokenMatrix, lo: usize, hi: usize, out: &mut [f64]) {
    if hi - lo <= PAIRWISE_BLOCK {
        out.fill(0.0);
        for t in lo..hi {
            for (acc, v) in out.iter_mut().zip(m.row(t)) {
                *acc += v;
            }
        }
        return;
    }
    let mid = lo + (hi - lo) / 2;
    pairwise_row_sum(m, lo, mid, out);
    let mut right = vec![0.0; out.len()];
    pairwise_row_sum(m, mid, hi, &mut right);
    for (acc, r) in out.iter_mut().zip(&right) {
        *acc += r;
    }
}

/// The last row of `m`, as used by EOS-token pooling.
pub fn last_token_pool(m: &TokenMatrix) -> PooledVector {
    PooledVector {
        values: m.row(m.rows - 1).to_vec(),
        source_length: m.rows,
        pooling: Pooling::LastToken,
    }
}

/// Inclusive layer interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRange {
    pub lo: usize,
    pub hi: usize,
}

impl LayerRange {
    pub fn new(lo: usize, hi: usize, n_layers: usize) -> Result<Self> {
        if lo > hi || hi >= n_layers {
            return Err(Error::InvalidInput(format!(
                "layer range [{lo}, {hi}] invalid for {n_layers} layers"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn len(&self) -> usize {
        self.hi - self.lo + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, layer: usize) -> bool {
        (self.lo..=self.hi).contains(&layer)
    }

    pub fn iter(&self) -> std::ops::RangeInclusive<usize> {
        self.lo..=self.hi
    }
}

/// Layers `floor(n/4)` through `floor(3n/4)`, clamped to valid indices.
pub fn middle_layers(n_layers: usize) -> Result<LayerRange> {
    if n_layers < 4 {
        return Err(Error::InvalidInput(format!(
            "middle-layer rule needs at least 4 layers, got {n_layers}"
        )));
    }
    let last = n_layers - 1;
    let lo = (n_layers / 4).min(last);
    let hi = (3 * n_layers / 4).min(last);
    LayerRange::new(lo, hi, n_layers)
}
