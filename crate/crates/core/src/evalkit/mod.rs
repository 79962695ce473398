//! Predictive sampling and forecast metrics.
//!
//! Intervals are empirical quantiles of predictive draws under the Hazen
//! rule ([`crate::numkit::quantile_sorted`]); coverage (PICP) and mean
//! width (MPIW) pool every (sequence, step, feature) triple.

mod drivers;
mod sampling;

pub use drivers::{multistep_eval, unistep_eval, EvalOptions, EvalOutcome, SequenceForecast};
pub use sampling::{multistep_forecast, sample_predictive, PredictiveSamples};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit;

/// Lower and upper bounds per step and feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalBounds {
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
}

impl IntervalBounds {
    pub fn n_steps(&self) -> usize {
        self.lower.len()
    }
}

/// Central intervals at `level` from the `(1 - level) / 2` and
/// `1 - (1 - level) / 2` quantiles of each step's draws.
pub fn intervals_from_samples(samples: &PredictiveSamples, level: f64) -> Result<IntervalBounds> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!("coverage level must lie in (0, 1), got {level}")));
    }
    let tail = (1.0 - level) / 2.0;
    let mut lower = Vec::with_capacity(samples.n_steps());
    let mut upper = Vec::with_capacity(samples.n_steps());
    for draws in &samples.steps {
        let n = draws.len();
        if (n as f64) * (1.0 - level) < 1.0 - 1e-9 {
            return Err(Error::domain(format!(
                "{n} draws are too few for a {level} interval; need at least {}",
                (1.0 / (1.0 - level)).ceil()
            )));
        }
        let d = draws[0].len();
        let (mut lo, mut hi) = (Vec::with_capacity(d), Vec::with_capacity(d));
        for j in 0..d {
            let mut col: Vec<f64> = draws.iter().map(|x| x[j]).collect();
            col.sort_by(f64::total_cmp);
            lo.push(numkit::quantile_sorted(&col, tail)?);
            hi.push(numkit::quantile_sorted(&col, 1.0 - tail)?);
        }
        lower.push(lo);
        upper.push(hi);
    }
    Ok(IntervalBounds { lower, upper })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimestepCoverage {
    pub t: usize,
    pub picp: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub picp: f64,
    pub mpiw: f64,
    pub per_timestep: Vec<TimestepCoverage>,
}

/// Coverage of `truth` by `bounds` (one entry per sequence, equal step
/// counts), closed intervals. Step `i` is labelled `first_t + i`.
pub fn picp_mpiw(bounds: &[IntervalBounds], truth: &[Vec<Vec<f64>>], first_t: usize) -> Result<Coverage> {
    if bounds.len() != truth.len() || bounds.is_empty() {
        return Err(Error::domain(format!(
            "{} interval sets for {} truth sequences",
            bounds.len(),
            truth.len()
        )));
    }
    let steps = bounds[0].n_steps();
    let mut hits = vec![0usize; steps];
    let mut counts = vec![0usize; steps];
    let mut width = 0.0;
    for (b, x) in bounds.iter().zip(truth) {
        if b.n_steps() != steps || x.len() != steps || b.upper.len() != steps {
            return Err(Error::domain("interval and truth step counts differ"));
        }
        for i in 0..steps {
            let (lo, hi, xi) = (&b.lower[i], &b.upper[i], &x[i]);
            if lo.len() != xi.len() || hi.len() != xi.len() {
                return Err(Error::domain("interval and truth feature counts differ"));
            }
            for j in 0..xi.len() {
                if lo[j] <= xi[j] && xi[j] <= hi[j] {
                    hits[i] += 1;
                }
                width += hi[j] - lo[j];
                counts[i] += 1;
            }
        }
    }
    let total: usize = counts.iter().sum();
    Ok(Coverage {
        picp: hits.iter().sum::<usize>() as f64 / total as f64,
        mpiw: width / total as f64,
        per_timestep: (0..steps)
            .map(|i| TimestepCoverage {
                t: first_t + i,
                picp: hits[i] as f64 / counts[i] as f64,
                n: counts[i],
            })
            .collect(),
    })
}

/// Mean squared deviation over every sequence, step and feature.
pub fn mse(predictions: &[Vec<Vec<f64>>], truth: &[Vec<Vec<f64>>]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::domain("prediction and truth sequence counts differ"));
    }
    let (mut se, mut n) = (0.0, 0usize);
    for (p, x) in predictions.iter().zip(truth) {
        if p.len() != x.len() {
            return Err(Error::domain("prediction and truth step counts differ"));
        }
        for (a, b) in p.iter().zip(x) {
            if a.len() != b.len() {
                return Err(Error::domain("prediction and truth feature counts differ"));
            }
            se += numkit::squared_distance(a, b);
            n += a.len();
        }
    }
    if n == 0 {
        return Err(Error::domain("mse over zero values"));
    }
    Ok(se / n as f64)
}

/// `(probability, conditional mean)` of each ground-truth regime.
pub type Modes = Vec<(f64, Vec<f64>)>;

/// Running dist-mse: sums of mode-weighted squared deviations of draws
/// from the known conditional means, and the number of draws.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DistMse {
    pub sum: f64,
    pub count: usize,
}

impl DistMse {
    /// Adds one sequence; `modes[i]` belongs to step `i` of `samples`.
    pub fn add(&mut self, samples: &PredictiveSamples, modes: &[Modes]) -> Result<()> {
        if modes.len() != samples.n_steps() {
            return Err(Error::domain("one set of ground-truth modes is needed per step"));
        }
        for (draws, m) in samples.steps.iter().zip(modes) {
            if m.is_empty() {
                return Err(Error::domain("dist-mse needs ground-truth conditional means"));
            }
            for x in draws {
                let d = x.len() as f64;
                self.sum += m
                    .iter()
                    .map(|(p, mean)| p * numkit::squared_distance(x, mean) / d)
                    .sum::<f64>();
                self.count += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &DistMse) {
        self.sum += other.sum;
        self.count += other.count;
    }

    pub fn value(&self) -> Result<f64> {
        if self.count == 0 {
            return Err(Error::domain("dist-mse over zero draws"));
        }
        Ok(self.sum / self.count as f64)
    }
}

/// Mean over steps and draws of `sum_j p_j |x - m_j|^2 / d`.
pub fn dist_mse(samples: &PredictiveSamples, modes: &[Modes]) -> Result<f64> {
    let mut acc = DistMse::default();
    acc.add(samples, modes)?;
    acc.value()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mse: f64,
    pub dist_mse: Option<f64>,
    pub picp: f64,
    pub mpiw: f64,
    pub level: f64,
    pub picp_per_timestep: Vec<TimestepCoverage>,
}

impl MetricsReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "metric,value")?;
        writeln!(w, "mse,{}", self.mse)?;
        if let Some(d) = self.dist_mse {
            writeln!(w, "dist_mse,{d}")?;
        }
        writeln!(w, "picp,{}", self.picp)?;
        writeln!(w, "mpiw,{}", self.mpiw)?;
        writeln!(w, "level,{}", self.level)
    }

    pub fn write_picp_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,picp,n")?;
        for c in &self.picp_per_timestep {
            writeln!(w, "{},{},{}", c.t, c.picp, c.n)?;
        }
        Ok(())
    }
}

fn feature_header(prefix: &str, d: usize) -> String {
    let mut h = prefix.to_string();
    for j in 0..d {
        h.push_str(&format!(",f{j}"));
    }
    h
}

/// `series_id,t,draw_id,f0,...`.
pub fn write_samples_csv<W: Write>(forecasts: &[SequenceForecast], mut w: W) -> std::io::Result<()> {
    let d = forecasts.first().map_or(0, |f| f.truth.first().map_or(0, Vec::len));
    writeln!(w, "{}", feature_header("series_id,t,draw_id", d))?;
    for f in forecasts {
        for (i, draws) in f.samples.steps.iter().enumerate() {
            for (k, x) in draws.iter().enumerate() {
                write!(w, "{},{},{}", f.id, f.first_t + i, k)?;
                for v in x {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
        }
    }
    Ok(())
}

/// `series_id,t,feature,lower,upper,point,truth`.
pub fn write_intervals_csv<W: Write>(forecasts: &[SequenceForecast], mut w: W) -> std::io::Result<()> {
    writeln!(w, "series_id,t,feature,lower,upper,point,truth")?;
    for f in forecasts {
        for i in 0..f.truth.len() {
            for j in 0..f.truth[i].len() {
                writeln!(
                    w,
                    "{},{},f{},{},{},{},{}",
                    f.id,
                    f.first_t + i,
                    j,
                    f.bounds.lower[i][j],
                    f.bounds.upper[i][j],
                    f.point[i][j],
                    f.truth[i][j]
                )?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
