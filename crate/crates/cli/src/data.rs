use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use smct_core::dataio::{load_csv, CsvSchema, NormStats, SeriesDataset, Split, SplitRatios, SyntheticSpec};

/// Where a model's data came from and how it was prepared; stored in the
/// checkpoint so evaluation sees the same split and scaling as training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSource {
    pub path: PathBuf,
    pub schema: CsvSchema,
    pub ratios: SplitRatios,
    pub split_seed: u64,
    pub norm: Option<NormStats>,
    /// Generator settings when the file is synthetic; enables dist-mse.
    pub spec: Option<SyntheticSpec>,
}

impl DataSource {
    /// Loads, splits and (optionally) standardizes with train statistics.
    pub fn prepare(
        path: PathBuf,
        schema: CsvSchema,
        spec: Option<SyntheticSpec>,
        normalize: bool,
        split_seed: u64,
    ) -> Result<(Self, SeriesDataset)> {
        let ratios = if spec.is_some() {
            SplitRatios::SYNTHETIC
        } else {
            SplitRatios::REAL
        };
        let (mut ds, _) = load_csv(&path, &schema)?;
        ds.assign_splits(&ratios, split_seed)?;
        if normalize {
            ds.normalize()?;
        }
        let src = Self {
            path,
            schema,
            ratios,
            split_seed,
            norm: ds.norm.clone(),
            spec,
        };
        Ok((src, ds))
    }

    /// Reloads the data, from `path` instead of the recorded file if given,
    /// reusing the recorded split seed and normalization statistics.
    pub fn reload(&self, path: Option<&Path>) -> Result<SeriesDataset> {
        let path = path.unwrap_or(&self.path);
        let (mut ds, _) = load_csv(path, &self.schema)?;
        ds.assign_splits(&self.ratios, self.split_seed)?;
        if let Some(norm) = &self.norm {
            if norm.mean.len() != ds.n_features() {
                bail!(
                    "{} has {} features, the model was trained on {}",
                    path.display(),
                    ds.n_features(),
                    norm.mean.len()
                );
            }
            for series in ds.data.iter_mut() {
                for x in series.iter_mut() {
                    *x = norm.normalize(x);
                }
            }
            ds.norm = Some(norm.clone());
        }
        Ok(ds)
    }

    pub fn from_value(value: &serde_json::Value) -> Result<Self> {
        serde_json::from_value(value.clone()).context("checkpoint has no readable data source")
    }
}

pub fn parse_split(name: &str) -> Result<Split> {
    Ok(match name {
        "train" => Split::Train,
        "val" => Split::Val,
        "test" => Split::Test,
        _ => bail!("unknown split {name:?}, expected train, val or test"),
    })
}

/// Sequences and ids of one split.
pub fn split_sequences(ds: &SeriesDataset, split: Split) -> (Vec<Vec<Vec<f64>>>, Vec<String>) {
    let idx = ds.indices(split);
    let ids = idx.iter().map(|&i| ds.ids[i].clone()).collect();
    (ds.sequences(split), ids)
}

pub fn parse_list(text: &str) -> Vec<String> {
    text.split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}
