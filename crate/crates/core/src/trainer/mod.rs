//! Training: Adam on the weights through the particle-weighted loss, and
//! stochastic-approximation EM for the noise variances.
//!
//! Each batch runs the filter on every sequence (in parallel), averages the
//! loss gradients, takes one Adam step on the weight tensors, then one EM
//! step on the variances using statistics from the same filter runs.
//! Per-sequence results are reduced in a fixed order, so a run is
//! bit-reproducible for a given seed regardless of the thread count.

mod checkpoint;
mod loss;
mod optim;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use loss::{em_statistics, lineage_weights, smc_loss_and_grad};
pub use optim::{AdamConfig, LrSchedule, OptState};

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcore::GradMap;
use crate::error::{Error, Result};
use crate::model::{ModelParams, NoiseScales};
use crate::numkit::SeededRng;
use crate::smc::{self, FilterOutput};

pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-6;

const SHUFFLE_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;
const VALIDATION_STREAM: u64 = 3;

/// Which noise sources EM updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmSwitches {
    pub q: bool,
    pub k: bool,
    pub v: bool,
    pub z: bool,
    pub obs: bool,
}

impl EmSwitches {
    pub fn all() -> Self {
        Self {
            q: true,
            k: true,
            v: true,
            z: true,
            obs: true,
        }
    }

    pub fn none() -> Self {
        Self {
            q: false,
            k: false,
            v: false,
            z: false,
            obs: false,
        }
    }
}

impl Default for EmSwitches {
    fn default() -> Self {
        Self::all()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub particles: usize,
    pub lag: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub em_exponent: f64,
    pub em: EmSwitches,
    pub variance_floor: f64,
    /// When false, only EM runs; the weight tensors stay fixed.
    pub update_weights: bool,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            particles: 10,
            lag: 24,
            epochs: 50,
            batch_size: 32,
            schedule: LrSchedule::default(),
            adam: AdamConfig::default(),
            em_exponent: 0.6,
            em: EmSwitches::all(),
            variance_floor: DEFAULT_VARIANCE_FLOOR,
            update_weights: true,
            patience: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::domain("particles must be >= 1"));
        }
        if self.lag == 0 {
            return Err(Error::domain("lag must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::domain("batch_size must be >= 1"));
        }
        if !(self.em_exponent > 0.5 && self.em_exponent <= 1.0) {
            return Err(Error::domain(format!(
                "em_exponent must lie in (0.5, 1], got {}",
                self.em_exponent
            )));
        }
        if !(self.variance_floor > 0.0) {
            return Err(Error::domain("variance_floor must be > 0"));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.epsilon > 0.0) {
            return Err(Error::domain(format!("invalid Adam settings {a:?}")));
        }
        self.schedule.validate()
    }
}

/// `var <- (1 - eta) var + eta stat` with `eta = p^-exponent`, floored,
/// for the sources switched on.
pub fn em_update_variances(
    current: &NoiseScales,
    stats: &NoiseScales,
    p: u64,
    exponent: f64,
    switches: &EmSwitches,
    floor: f64,
) -> Result<NoiseScales> {
    if p < 1 {
        return Err(Error::domain("EM step counter starts at 1"));
    }
    let eta = (p as f64).powf(-exponent);
    let blend = |on: bool, old: f64, stat: f64| {
        let v = if on { (1.0 - eta) * old + eta * stat } else { old };
        v.max(floor)
    };
    Ok(NoiseScales {
        var_q: blend(switches.q, current.var_q, stats.var_q),
        var_k: blend(switches.k, current.var_k, stats.var_k),
        var_v: blend(switches.v, current.var_v, stats.var_v),
        var_z: blend(switches.z, current.var_z, stats.var_z),
        var_obs: blend(switches.obs, current.var_obs, stats.var_obs),
    })
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub split: String,
    /// Filter negative log-likelihood per predicted observation.
    pub loss: f64,
    /// Mean squared error of the weighted one-step point forecasts.
    pub mse: f64,
    pub noise: NoiseScales,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub const HEADER: &'static str = "epoch,split,loss,mse,var_q,var_k,var_v,var_z,var_obs";

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::HEADER)?;
        for r in &self.rows {
            let n = &r.noise;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.epoch, r.split, r.loss, r.mse, n.var_q, n.var_k, n.var_v, n.var_z, n.var_obs
            )?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
            .map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch (the last epoch without a
    /// validation split).
    pub params: ModelParams,
    pub opt: OptState,
    pub log: TrainLog,
    /// 1-based epoch the returned parameters come from; 0 if untrained.
    pub best_epoch: usize,
}

/// Filter summary of one sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceScore {
    /// `-log p(X_{2:T} | X_1) / (T - 1)`.
    pub nll: f64,
    pub mse: f64,
}

impl SequenceScore {
    pub fn from_filter(out: &FilterOutput, xs: &[Vec<f64>]) -> Self {
        let steps = (xs.len() - 1) as f64;
        let mut se = 0.0;
        let mut n = 0usize;
        for (p, x) in out.predictions.iter().zip(&xs[1..]) {
            for (a, b) in p.iter().zip(x) {
                se += (a - b) * (a - b);
                n += 1;
            }
        }
        Self {
            nll: -out.log_likelihood / steps,
            mse: se / n as f64,
        }
    }
}

fn mean_score(scores: &[SequenceScore]) -> (f64, f64) {
    let n = scores.len() as f64;
    (
        scores.iter().map(|s| s.nll).sum::<f64>() / n,
        scores.iter().map(|s| s.mse).sum::<f64>() / n,
    )
}

fn check_sequences(seqs: &[Vec<Vec<f64>>], params: &ModelParams, what: &str) -> Result<()> {
    for (i, s) in seqs.iter().enumerate() {
        if s.len() < 2 {
            return Err(Error::domain(format!("{what} sequence {i} has fewer than two steps")));
        }
        if s.iter()
            .any(|x| x.len() != params.dims.d_in || x.len() != params.dims.d_obs)
        {
            return Err(Error::shape("fit", params.dims.d_obs, format!("{what} sequence {i}")));
        }
    }
    Ok(())
}

/// Filter scores of `seqs` with a fixed noise stream per sequence.
pub fn score_sequences(
    seqs: &[Vec<Vec<f64>>],
    params: &ModelParams,
    particles: usize,
    rng: &SeededRng,
) -> Result<Vec<SequenceScore>> {
    seqs.par_iter()
        .enumerate()
        .map(|(i, xs)| {
            let out = smc::filter_sequence(xs, params, particles, &rng.derive(&[i as u64]))?;
            Ok(SequenceScore::from_filter(&out, xs))
        })
        .collect()
}

struct BatchItem {
    loss: f64,
    grads: GradMap,
    stats: NoiseScales,
    score: SequenceScore,
}

fn with_context(e: Error, step: u64, seq: usize) -> Error {
    let at = format!("at training step {step}, sequence {seq}");
    match e {
        Error::Numerical(msg) => Error::Numerical(format!("{at}: {msg}")),
        Error::Domain(msg) => Error::Domain(format!("{at}: {msg}")),
        other => other,
    }
}

fn process_sequence(
    xs: &[Vec<f64>],
    params: &ModelParams,
    config: &TrainConfig,
    rng: &SeededRng,
    step: u64,
    seq: usize,
) -> Result<BatchItem> {
    let out = smc::filter_sequence(xs, params, config.particles, rng).map_err(|e| with_context(e, step, seq))?;
    let (loss, grads) = if config.update_weights {
        smc_loss_and_grad(&out.cloud, out.cloud.weights(), xs, params).map_err(|e| with_context(e, step, seq))?
    } else {
        (0.0, GradMap::default())
    };
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite loss or gradient at training step {step}, sequence {seq}"
        )));
    }
    let stats = em_statistics(&out.cloud, xs, params)?;
    Ok(BatchItem {
        loss,
        grads,
        stats,
        score: SequenceScore::from_filter(&out, xs),
    })
}

fn mean_stats(items: &[BatchItem]) -> NoiseScales {
    let n = items.len() as f64;
    let mut s = NoiseScales::uniform(0.0);
    for it in items {
        s.var_q += it.stats.var_q;
        s.var_k += it.stats.var_k;
        s.var_v += it.stats.var_v;
        s.var_z += it.stats.var_z;
        s.var_obs += it.stats.var_obs;
    }
    NoiseScales {
        var_q: s.var_q / n,
        var_k: s.var_k / n,
        var_v: s.var_v / n,
        var_z: s.var_z / n,
        var_obs: s.var_obs / n,
    }
}

/// Trains `init` on `train`, selecting by validation loss when `val` is
/// non-empty.
pub fn fit(
    train: &[Vec<Vec<f64>>],
    val: &[Vec<Vec<f64>>],
    init: ModelParams,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    init.validate()?;
    if init.dims.lag != config.lag {
        return Err(Error::domain(format!(
            "model lag {} differs from configured lag {}",
            init.dims.lag, config.lag
        )));
    }
    if train.is_empty() {
        return Err(Error::domain("empty training split"));
    }
    check_sequences(train, &init, "train")?;
    check_sequences(val, &init, "validation")?;

    let root = SeededRng::new(config.seed);
    let val_rng = root.derive(&[VALIDATION_STREAM]);
    let mut params = init;
    let mut opt = OptState::new(&params);
    let mut log = TrainLog::default();
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut since_best = 0usize;

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        root.derive(&[SHUFFLE_STREAM, epoch as u64]).shuffle(&mut order);
        let mut scores = Vec::with_capacity(train.len());
        for batch in order.chunks(config.batch_size) {
            let step = opt.em_step + 1;
            let items = batch
                .par_iter()
                .map(|&sid| {
                    let rng = root.derive(&[TRAIN_STREAM, epoch as u64, sid as u64]);
                    process_sequence(&train[sid], &params, config, &rng, step, sid)
                })
                .collect::<Result<Vec<_>>>()?;
            if config.update_weights {
                let mut grads = GradMap::default();
                let mut loss = 0.0;
                for it in &items {
                    grads.merge(&it.grads);
                    loss += it.loss;
                }
                if !loss.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite batch loss at training step {step}"
                    )));
                }
                grads.scale(1.0 / items.len() as f64);
                opt.adam_step(&mut params, &grads, &config.schedule, &config.adam)
                    .map_err(|e| with_context(e, step, batch[0]))?;
            }
            opt.em_step += 1;
            params.noise = em_update_variances(
                &params.noise,
                &mean_stats(&items),
                opt.em_step,
                config.em_exponent,
                &config.em,
                config.variance_floor,
            )?;
            scores.extend(items.iter().map(|it| it.score));
        }
        let (loss, mse) = mean_score(&scores);
        log.rows.push(LogRow {
            epoch,
            split: "train".into(),
            loss,
            mse,
            noise: params.noise,
        });

        let criterion = if val.is_empty() {
            loss
        } else {
            let (vloss, vmse) = mean_score(&score_sequences(val, &params, config.particles, &val_rng)?);
            log.rows.push(LogRow {
                epoch,
                split: "val".into(),
                loss: vloss,
                mse: vmse,
                noise: params.noise,
            });
            vloss
        };
        if val.is_empty() || criterion < best.0 {
            best = (criterion, params.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
        }
        if config.patience.is_some_and(|p| since_best >= p) {
            break;
        }
    }
    Ok(TrainOutcome {
        params: best.1,
        opt,
        log,
        best_epoch: best.2,
    })
}
