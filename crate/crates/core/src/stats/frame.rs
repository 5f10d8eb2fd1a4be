use crate::error::{Error, Result};

/// Named numeric columns over rows that each carry a string id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Frame {
    ids: Vec<String>,
    columns: Vec<(String, Vec<f64>)>,
}

impl Frame {
    pub fn new(ids: Vec<String>) -> Self {
        Self {
            ids,
            columns: Vec::new(),
        }
    }

    /// Adds (or replaces) a column; its length must match the id count and
    /// all values must be finite.
    pub fn with_column(mut self, name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if values.len() != self.ids.len() {
            return Err(Error::Dimension(format!(
                "column `{name}` has {} values for {} rows",
                values.len(),
                self.ids.len()
            )));
        }
        if let Some(row) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "column `{name}` has a non-finite value at row {row}"
            )));
        }
        match self.columns.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = values,
            None => self.columns.push((name, values)),
        }
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|(n, _)| n.as_str())
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.iter().any(|(n, _)| n == name)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::InvalidInput(format!("no column named `{name}`")))
    }

    /// New frame with rows taken from `indices` (repeats allowed).
    pub fn take_rows(&self, indices: &[usize]) -> Self {
        Self {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            columns: self
                .columns
                .iter()
                .map(|(n, v)| (n.clone(), indices.iter().map(|&i| v[i]).collect()))
                .collect(),
        }
    }

    /// Rows reordered by id (stable for equal ids).
    pub fn sorted_by_id(&self) -> Self {
        let mut order: Vec<usize> = (0..self.n_rows()).collect();
        order.sort_by(|&a, &b| self.ids[a].cmp(&self.ids[b]));
        self.take_rows(&order)
    }
}
