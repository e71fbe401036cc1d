//! Labeled datasets, CSV ingestion and the synthetic long-tail generator.

mod csv_io;
mod synthetic;

pub use csv_io::{load_csv, load_truth_csv, parse_csv, parse_truth_csv, save_csv, save_truth_csv, write_csv};
pub use synthetic::{generate_longtail, zipf_frequencies, GroundTruth, SyntheticSpec};

use std::collections::HashSet;

use crate::error::{Error, Result};

/// An ordered collection of `(id, features, label)` examples sharing one
/// feature dimension and one label space `[0, n_classes)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    ids: Vec<String>,
    features: Vec<f64>,
    labels: Vec<u32>,
    dim: usize,
    n_classes: usize,
}

impl LabeledDataset {
    /// Builds a dataset from row-major `features` (`ids.len() * dim` values).
    pub fn from_flat(
        ids: Vec<String>,
        features: Vec<f64>,
        dim: usize,
        labels: Vec<u32>,
        n_classes: usize,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be at least 1"));
        }
        if n_classes < 2 {
            return Err(Error::invalid("need at least 2 classes"));
        }
        if ids.len() != labels.len() || features.len() != ids.len() * dim {
            return Err(Error::invalid(format!(
                "{} ids, {} labels and {} feature values do not describe a {}-dimensional dataset",
                ids.len(),
                labels.len(),
                features.len(),
                dim
            )));
        }
        if let Some((i, y)) = labels
            .iter()
            .enumerate()
            .find(|(_, &y)| y as usize >= n_classes)
        {
            return Err(Error::invalid(format!(
                "example {i}: label {y} outside [0, {n_classes})"
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid(format!("duplicate id {id:?}")));
            }
        }
        Ok(LabeledDataset {
            ids,
            features,
            labels,
            dim,
            n_classes,
        })
    }

    /// Builds a dataset from one feature vector per example.
    pub fn from_rows(
        ids: Vec<String>,
        rows: Vec<Vec<f64>>,
        labels: Vec<u32>,
        n_classes: usize,
    ) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::invalid(format!(
                "example {i} has {} features, expected {dim}",
                rows[i].len()
            )));
        }
        Self::from_flat(ids, rows.concat(), dim, labels, n_classes)
    }

    /// Convenience constructor with ids `"0"`, `"1"`, ...
    pub fn unnamed(rows: Vec<Vec<f64>>, labels: Vec<u32>, n_classes: usize) -> Result<Self> {
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        Self::from_rows(ids, rows, labels, n_classes)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    #[inline]
    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn flat_features(&self) -> &[f64] {
        &self.features
    }

    /// The examples at `indices`, in that order. Keeps the label space.
    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.features(i));
        }
        LabeledDataset {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            dim: self.dim,
            n_classes: self.n_classes,
        }
    }

    /// Appends the examples of `other`. Dimensions must match; the label space
    /// becomes the larger of the two and ids must stay unique.
    pub fn concat(&self, other: &LabeledDataset) -> Result<LabeledDataset> {
        if other.dim != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "dimension {} vs {}",
                self.dim, other.dim
            )));
        }
        let mut ids = self.ids.clone();
        ids.extend(other.ids.iter().cloned());
        let mut features = self.features.clone();
        features.extend_from_slice(&other.features);
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Self::from_flat(
            ids,
            features,
            self.dim,
            labels,
            self.n_classes.max(other.n_classes),
        )
    }

    /// Number of examples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &y in &self.labels {
            counts[y as usize] += 1;
        }
        counts
    }
}
