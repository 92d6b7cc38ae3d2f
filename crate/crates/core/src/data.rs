//! In-memory labelled datasets.

use crate::error::{Error, Result};

/// Row-oriented labelled samples. `features` may be empty rows when the
/// frozen block looks samples up by `id` instead.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub ids: Vec<u64>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    /// Builds a dataset with ids `0..n`.
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        let ids = (0..features.len() as u64).collect();
        Self::with_ids(ids, features, labels)
    }

    pub fn with_ids(ids: Vec<u64>, features: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if ids.len() != features.len() || ids.len() != labels.len() {
            return Err(Error::Shape(format!(
                "dataset columns disagree: {} ids, {} feature rows, {} labels",
                ids.len(),
                features.len(),
                labels.len()
            )));
        }
        if let Some(first) = features.first() {
            let d = first.len();
            if let Some(i) = features.iter().position(|r| r.len() != d) {
                return Err(Error::Shape(format!("row {i} has {} features, expected {d}", features[i].len())));
            }
        }
        Ok(Self { ids, features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// One more than the largest label.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Every sample repeated `times` times in place (used by invariance checks).
    pub fn repeated(&self, times: usize) -> Self {
        let idx: Vec<usize> = (0..self.len()).flat_map(|i| std::iter::repeat_n(i, times)).collect();
        self.subset(&idx)
    }
}
