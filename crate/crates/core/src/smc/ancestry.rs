use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use super::ParticleCloud;
use crate::error::{Error, Result};
use crate::numkit;

/// Unique-ancestor counts of the current particles, by lag.
///
/// Lag 1 is the current generation, lag `l` the generation `l - 1` steps
/// back, down to the first observation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AncestryReport {
    pub counts: Vec<usize>,
}

impl AncestryReport {
    pub fn from_cloud(cloud: &ParticleCloud) -> Self {
        let gens = cloud.generations();
        let mut counts = Vec::with_capacity(gens.len());
        let mut current: Vec<usize> = (0..cloud.n_particles()).collect();
        for back in 0..gens.len() {
            let g = gens.len() - 1 - back;
            let unique: BTreeSet<usize> = current.iter().copied().collect();
            counts.push(unique.len());
            if g > 0 {
                current = current.iter().map(|&i| gens[g].ancestors[i]).collect();
            }
        }
        Self { counts }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AncestrySummaryRow {
    pub lag: usize,
    pub mean_unique: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Mean and empirical 2.5% / 97.5% band of unique-ancestor counts across
/// sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct AncestrySummary {
    pub rows: Vec<AncestrySummaryRow>,
}

impl AncestrySummary {
    pub fn from_reports(reports: &[AncestryReport]) -> Result<Self> {
        let depth = reports.iter().map(|r| r.counts.len()).max().unwrap_or(0);
        let mut rows = Vec::with_capacity(depth);
        for l in 0..depth {
            let mut vals: Vec<f64> = reports
                .iter()
                .filter_map(|r| r.counts.get(l).map(|c| *c as f64))
                .collect();
            vals.sort_by(f64::total_cmp);
            rows.push(AncestrySummaryRow {
                lag: l + 1,
                mean_unique: vals.iter().sum::<f64>() / vals.len() as f64,
                ci_low: numkit::quantile_sorted(&vals, 0.025)?,
                ci_high: numkit::quantile_sorted(&vals, 0.975)?,
            });
        }
        Ok(Self { rows })
    }

    /// CSV with header `lag,mean_unique,ci_low,ci_high`.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "lag,mean_unique,ci_low,ci_high")?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.lag, r.mean_unique, r.ci_low, r.ci_high)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
            .map_err(|e| Error::io(path, e))
    }
}
