//! Unistep (teacher-forced) and multistep (frozen history) evaluation over
//! a set of sequences.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{intervals_from_samples, mse, picp_mpiw, DistMse, IntervalBounds, MetricsReport, Modes};
use super::{multistep_forecast, sample_predictive, PredictiveSamples};
use crate::dataio::{NormStats, SyntheticSpec};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numkit::SeededRng;
use crate::smc::ParticleCloud;

const FILTER_STREAM: u64 = 0;
const SAMPLE_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub particles: usize,
    pub n_samples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            particles: 10,
            n_samples: 1000,
            level: 0.95,
            seed: 0,
        }
    }
}

/// Forecasts for one sequence on the original scale. Step `i` predicts the
/// observation at time `first_t + i` (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceForecast {
    pub id: String,
    pub first_t: usize,
    pub samples: PredictiveSamples,
    pub point: Vec<Vec<f64>>,
    pub truth: Vec<Vec<f64>>,
    pub bounds: IntervalBounds,
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report: MetricsReport,
    pub forecasts: Vec<SequenceForecast>,
}

fn restore(norm: Option<&NormStats>, x: &[f64]) -> Vec<f64> {
    match norm {
        Some(n) => n.denormalize(x),
        None => x.to_vec(),
    }
}

fn filter_prefix(xs: &[Vec<f64>], params: &ModelParams, particles: usize, rng: &SeededRng) -> Result<ParticleCloud> {
    let mut cloud = ParticleCloud::new(particles, params.dims.lag)?;
    cloud.initialize(&xs[0], params, rng)?;
    for x in &xs[1..] {
        cloud.propagate(x, params, rng)?;
        cloud.compute_weights(x, params)?;
    }
    Ok(cloud)
}

fn check_ids(seqs: &[Vec<Vec<f64>>], ids: &[String]) -> Result<()> {
    if seqs.is_empty() {
        return Err(Error::domain("no sequences to evaluate"));
    }
    if seqs.len() != ids.len() {
        return Err(Error::shape("evaluation ids", seqs.len(), ids.len()));
    }
    Ok(())
}

fn report(forecasts: &[SequenceForecast], level: f64, dist: Option<DistMse>) -> Result<MetricsReport> {
    let points: Vec<Vec<Vec<f64>>> = forecasts.iter().map(|f| f.point.clone()).collect();
    let truth: Vec<Vec<Vec<f64>>> = forecasts.iter().map(|f| f.truth.clone()).collect();
    let bounds: Vec<IntervalBounds> = forecasts.iter().map(|f| f.bounds.clone()).collect();
    let cov = picp_mpiw(&bounds, &truth, forecasts[0].first_t)?;
    Ok(MetricsReport {
        mse: mse(&points, &truth)?,
        dist_mse: dist.map(|d| d.value()).transpose()?,
        picp: cov.picp,
        mpiw: cov.mpiw,
        level,
        picp_per_timestep: cov.per_timestep,
    })
}

/// One-step-ahead evaluation: at each `t = 2..T` the filter, having seen
/// `X_{1:t-1}`, gives the weighted point forecast and `n_samples`
/// predictive draws of `X_t`; then `X_t` is absorbed.
///
/// Sequences are on the model's scale; `norm` maps everything back to the
/// original scale before scoring. With `truth_spec`, dist-mse is scored
/// against the generator's conditional means given the observed `X_{t-1}`.
pub fn unistep_eval(
    seqs: &[Vec<Vec<f64>>],
    ids: &[String],
    params: &ModelParams,
    opts: &EvalOptions,
    norm: Option<&NormStats>,
    truth_spec: Option<&SyntheticSpec>,
) -> Result<EvalOutcome> {
    check_ids(seqs, ids)?;
    let root = SeededRng::new(opts.seed);
    let per_seq = seqs
        .par_iter()
        .enumerate()
        .map(|(i, xs)| {
            if xs.len() < 2 {
                return Err(Error::domain(format!("sequence {} has fewer than two steps", ids[i])));
            }
            let seq_rng = root.derive(&[i as u64]);
            let filter_rng = seq_rng.derive(&[FILTER_STREAM]);
            let mut cloud = ParticleCloud::new(opts.particles, params.dims.lag)?;
            cloud.initialize(&xs[0], params, &filter_rng)?;
            let (mut steps, mut point, mut modes) = (Vec::new(), Vec::new(), Vec::<Modes>::new());
            for (t, x) in xs.iter().enumerate().skip(1) {
                point.push(restore(norm, &cloud.point_prediction(params)?));
                let mut r = seq_rng.derive(&[SAMPLE_STREAM, t as u64]);
                let draws = sample_predictive(&cloud, params, opts.n_samples, &mut r)?;
                steps.push(draws.iter().map(|d| restore(norm, d)).collect());
                if let Some(spec) = truth_spec {
                    let prev = restore(norm, &xs[t - 1]);
                    modes.push(spec.modes(prev[0]).into_iter().map(|(p, m)| (p, vec![m])).collect());
                }
                cloud.propagate(x, params, &filter_rng)?;
                cloud.compute_weights(x, params)?;
            }
            let samples = PredictiveSamples { steps };
            let mut dist = DistMse::default();
            if truth_spec.is_some() {
                dist.add(&samples, &modes)?;
            }
            let fc = SequenceForecast {
                id: ids[i].clone(),
                first_t: 2,
                bounds: intervals_from_samples(&samples, opts.level)?,
                samples,
                point,
                truth: xs[1..].iter().map(|x| restore(norm, x)).collect(),
            };
            Ok((fc, dist))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut dist = DistMse::default();
    let mut forecasts = Vec::with_capacity(per_seq.len());
    for (f, d) in per_seq {
        dist.merge(&d);
        forecasts.push(f);
    }
    let report = report(&forecasts, opts.level, truth_spec.map(|_| dist))?;
    Ok(EvalOutcome { report, forecasts })
}

/// Filters `X_{1:history}`, then rolls the model forward `horizon` steps;
/// the point forecast is the mean of the draws.
pub fn multistep_eval(
    seqs: &[Vec<Vec<f64>>],
    ids: &[String],
    params: &ModelParams,
    history: usize,
    horizon: usize,
    opts: &EvalOptions,
    norm: Option<&NormStats>,
) -> Result<EvalOutcome> {
    check_ids(seqs, ids)?;
    if history < 1 || horizon < 1 {
        return Err(Error::domain("history and horizon must be >= 1"));
    }
    let root = SeededRng::new(opts.seed);
    let forecasts = seqs
        .par_iter()
        .enumerate()
        .map(|(i, xs)| {
            if xs.len() < history + horizon {
                return Err(Error::domain(format!(
                    "sequence {} has {} steps, fewer than history {history} + horizon {horizon}",
                    ids[i],
                    xs.len()
                )));
            }
            let seq_rng = root.derive(&[i as u64]);
            let cloud = filter_prefix(
                &xs[..history],
                params,
                opts.particles,
                &seq_rng.derive(&[FILTER_STREAM]),
            )?;
            let mut r = seq_rng.derive(&[SAMPLE_STREAM]);
            let raw = multistep_forecast(&cloud, params, horizon, opts.n_samples, &mut r)?;
            let samples = PredictiveSamples {
                steps: raw
                    .steps
                    .iter()
                    .map(|draws| draws.iter().map(|d| restore(norm, d)).collect())
                    .collect(),
            };
            Ok(SequenceForecast {
                id: ids[i].clone(),
                first_t: history + 1,
                bounds: intervals_from_samples(&samples, opts.level)?,
                point: samples.means(),
                samples,
                truth: xs[history..history + horizon]
                    .iter()
                    .map(|x| restore(norm, x))
                    .collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = report(&forecasts, opts.level, None)?;
    Ok(EvalOutcome { report, forecasts })
}
