//! Series datasets: synthetic generators, CSV ingestion and export,
//! train/validation/test assignment and train-only standardization.

mod csvio;
mod synthetic;

pub use csvio::{load_csv, read_csv, write_csv, CsvSchema, LoadReport};
pub use synthetic::{gen_model_I, gen_model_II, generate_synthetic, ModelKind, SyntheticSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::SeededRng;

const SPLIT_STREAM: u64 = 0x5_9117;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    /// 70/15/15, for real-world series.
    pub const REAL: SplitRatios = SplitRatios {
        train: 0.7,
        val: 0.15,
        test: 0.15,
    };
    /// 80/10/10, for synthetic series.
    pub const SYNTHETIC: SplitRatios = SplitRatios {
        train: 0.8,
        val: 0.1,
        test: 0.1,
    };

    /// Split sizes for `n` series; validation and train are rounded, test
    /// takes the remainder.
    pub fn counts(&self, n: usize) -> Result<[usize; 3]> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(*r >= 0.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!(
                "split ratios must be >= 0 and sum to 1, got {self:?}"
            )));
        }
        let train = (n as f64 * self.train).round() as usize;
        let val = ((n as f64 * self.val).round() as usize).min(n.saturating_sub(train));
        let test = n - train - val;
        if train == 0 || val == 0 || test == 0 {
            return Err(Error::domain(format!(
                "{n} series give an empty split at ratios {self:?}: {train}/{val}/{test}"
            )));
        }
        Ok([train, val, test])
    }
}

/// Per-feature standardization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| v * s + m)
            .collect()
    }

    /// Maps a width (or a standard deviation) back to the original scale.
    pub fn denormalize_scale(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.std).map(|(v, s)| v * s).collect()
    }
}

/// `n_series x T x d` observations with a split label per series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesDataset {
    pub ids: Vec<String>,
    pub features: Vec<String>,
    pub data: Vec<Vec<Vec<f64>>>,
    pub splits: Vec<Split>,
    /// Present when `data` has been standardized.
    pub norm: Option<NormStats>,
}

impl SeriesDataset {
    /// Every series is labelled train until a split is assigned.
    pub fn new(ids: Vec<String>, features: Vec<String>, data: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if ids.len() != data.len() {
            return Err(Error::shape("SeriesDataset", data.len(), ids.len()));
        }
        if data.is_empty() {
            return Err(Error::Schema("dataset has no series".into()));
        }
        let len = data[0].len();
        for (id, s) in ids.iter().zip(&data) {
            if s.len() != len {
                return Err(Error::Schema(format!(
                    "series {id} has {} steps, expected {len}; use windowing for ragged series",
                    s.len()
                )));
            }
            if s.iter().any(|x| x.len() != features.len()) {
                return Err(Error::Schema(format!("series {id} has rows of the wrong width")));
            }
        }
        let splits = vec![Split::Train; data.len()];
        Ok(Self {
            ids,
            features,
            data,
            splits,
            norm: None,
        })
    }

    pub fn n_series(&self) -> usize {
        self.data.len()
    }

    pub fn len(&self) -> usize {
        self.data[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.n_series()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn sequences(&self, split: Split) -> Vec<Vec<Vec<f64>>> {
        self.indices(split).into_iter().map(|i| self.data[i].clone()).collect()
    }

    /// Shuffles series by `seed` and labels them train/val/test.
    pub fn assign_splits(&mut self, ratios: &SplitRatios, seed: u64) -> Result<()> {
        let [train, val, _] = ratios.counts(self.n_series())?;
        let mut order: Vec<usize> = (0..self.n_series()).collect();
        SeededRng::new(seed).derive(&[SPLIT_STREAM]).shuffle(&mut order);
        for (rank, &i) in order.iter().enumerate() {
            self.splits[i] = if rank < train {
                Split::Train
            } else if rank < train + val {
                Split::Val
            } else {
                Split::Test
            };
        }
        Ok(())
    }

    /// Mean and population standard deviation per feature over every row
    /// of the train split.
    pub fn train_stats(&self) -> Result<NormStats> {
        let d = self.n_features();
        let rows: Vec<&Vec<f64>> = self
            .indices(Split::Train)
            .into_iter()
            .flat_map(|i| &self.data[i])
            .collect();
        if rows.is_empty() {
            return Err(Error::domain("no train rows to standardize with"));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in &rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std: Vec<f64> = var.iter().map(|s| (s / n).sqrt()).collect();
        if let Some(j) = std.iter().position(|s| !(*s > 0.0)) {
            return Err(Error::Schema(format!(
                "feature {} is constant on the train split and cannot be standardized",
                self.features[j]
            )));
        }
        Ok(NormStats { mean, std })
    }

    /// Standardizes every split with train-only statistics.
    pub fn normalize(&mut self) -> Result<()> {
        if self.norm.is_some() {
            return Err(Error::domain("dataset is already normalized"));
        }
        let stats = self.train_stats()?;
        for s in &mut self.data {
            for x in s.iter_mut() {
                *x = stats.normalize(x);
            }
        }
        self.norm = Some(stats);
        Ok(())
    }

    /// Keeps only the named feature columns, in the given order.
    pub fn select_features(&mut self, names: &[String]) -> Result<()> {
        let idx = names
            .iter()
            .map(|n| {
                self.features
                    .iter()
                    .position(|f| f == n)
                    .ok_or_else(|| Error::Schema(format!("unknown feature column {n:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        for s in &mut self.data {
            for x in s.iter_mut() {
                *x = idx.iter().map(|&j| x[j]).collect();
            }
        }
        self.features = names.to_vec();
        if let Some(norm) = &mut self.norm {
            norm.mean = idx.iter().map(|&j| norm.mean[j]).collect();
            norm.std = idx.iter().map(|&j| norm.std[j]).collect();
        }
        Ok(())
    }
}

/// Assigns splits by `seed`, then standardizes with train statistics.
pub fn split_normalize(mut dataset: SeriesDataset, ratios: &SplitRatios, seed: u64) -> Result<SeriesDataset> {
    dataset.assign_splits(ratios, seed)?;
    dataset.normalize()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests;
