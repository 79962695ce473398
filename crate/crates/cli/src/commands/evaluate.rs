use std::path::{Path, PathBuf};

use anyhow::Result;

use smct_core::dataio::SeriesDataset;
use smct_core::evalkit::{
    multistep_eval, unistep_eval, write_intervals_csv, write_samples_csv, EvalOptions, EvalOutcome,
};
use smct_core::trainer::Checkpoint;

use super::{create_dir, out_dir, write_file};
use crate::data::{parse_split, split_sequences, DataSource};
use crate::manifest::Manifest;
use crate::settings::Settings;
use crate::{EvalArgs, EvalCommon, ForecastArgs};

/// The dataset with the sequences and ids of the chosen split.
pub(super) type Loaded = (SeriesDataset, Vec<Vec<Vec<f64>>>, Vec<String>);

/// A checkpoint with its data source and resolved evaluation options.
pub(super) struct Target {
    pub ck_path: PathBuf,
    pub ck: Checkpoint,
    pub src: DataSource,
    pub data_override: Option<PathBuf>,
    pub split: String,
    pub opts: EvalOptions,
    pub dir: PathBuf,
}

impl Target {
    /// Without `sampling`, the draw count and level keep their defaults
    /// and stay out of the manifest.
    pub fn resolve(c: EvalCommon, s: &mut Settings, sampling: bool) -> Result<Self> {
        let ck_path: PathBuf = s.required("checkpoint", c.checkpoint)?;
        let ck = Checkpoint::load(&ck_path)?;
        let src = DataSource::from_value(&ck.data)?;
        let data_override = s.optional("data", c.data)?;
        let split = s.value("split", c.split, "test".to_string())?;
        parse_split(&split)?;
        let d = EvalOptions::default();
        let mut opts = EvalOptions {
            particles: s.value("particles", c.particles, ck.config.particles)?,
            seed: s.value("seed", c.seed, ck.config.seed)?,
            ..d
        };
        if sampling {
            opts.n_samples = s.value("samples", c.samples, d.n_samples)?;
            opts.level = s.value("level", c.level, d.level)?;
        }
        let dir = out_dir(s, c.out_dir)?;
        Ok(Self {
            ck_path,
            ck,
            src,
            data_override,
            split,
            opts,
            dir,
        })
    }

    pub fn data_path(&self) -> &Path {
        self.data_override.as_deref().unwrap_or(&self.src.path)
    }

    pub fn load(&self) -> Result<Loaded> {
        let ds = self.src.reload(self.data_override.as_deref())?;
        let (seqs, ids) = split_sequences(&ds, parse_split(&self.split)?);
        Ok((ds, seqs, ids))
    }

    pub fn manifest(&self, command: &'static str, s: &Settings) -> Result<Manifest> {
        let mut m = Manifest::new(command, self.opts.seed, s.resolved());
        m.input(&self.ck_path)?;
        m.input(self.data_path())?;
        Ok(m)
    }
}

fn write_report(dir: &Path, out: &EvalOutcome, metrics: &str, picp: &str, intervals: &str) -> Result<()> {
    write_file(dir, metrics, |w| out.report.write_csv(w))?;
    write_file(dir, picp, |w| out.report.write_picp_csv(w))?;
    write_file(dir, intervals, |w| write_intervals_csv(&out.forecasts, w))
}

fn summary(out: &EvalOutcome) -> String {
    let r = &out.report;
    let mut line = format!("mse {}", r.mse);
    if let Some(d) = r.dist_mse {
        line.push_str(&format!(", dist-mse {d}"));
    }
    line + &format!(", picp {} at level {}, mpiw {}", r.picp, r.level, r.mpiw)
}

pub fn eval(a: EvalArgs, s: &mut Settings) -> Result<()> {
    let target = Target::resolve(a.common, s, true)?;
    let write_samples = s.value("write_samples", a.write_samples, false)?;
    s.finish()?;

    let (ds, seqs, ids) = target.load()?;
    let out = unistep_eval(
        &seqs,
        &ids,
        &target.ck.params,
        &target.opts,
        ds.norm.as_ref(),
        target.src.spec.as_ref(),
    )?;

    let dir = &target.dir;
    create_dir(dir)?;
    let names = ["metrics.csv", "picp_per_timestep.csv", "intervals.csv"];
    write_report(dir, &out, names[0], names[1], names[2])?;
    let mut m = target.manifest("eval", s)?;
    for n in names {
        m.output(dir, n)?;
    }
    if write_samples {
        write_file(dir, "samples.csv", |w| write_samples_csv(&out.forecasts, w))?;
        m.output(dir, "samples.csv")?;
    }
    m.write(dir)?;
    println!("{}", summary(&out));
    Ok(())
}

pub fn forecast(a: ForecastArgs, s: &mut Settings) -> Result<()> {
    let target = Target::resolve(a.common, s, true)?;
    let horizon: usize = s.required("horizon", a.horizon)?;
    let history: Option<usize> = s.optional("history", a.history)?;
    s.finish()?;

    let (ds, seqs, ids) = target.load()?;
    let history = match history {
        Some(h) => h,
        None => ds.len().checked_sub(horizon).filter(|h| *h >= 1).ok_or_else(|| {
            anyhow::anyhow!(
                "horizon {horizon} leaves no history in sequences of length {}",
                ds.len()
            )
        })?,
    };
    s.derived("history", &history)?;
    let out = multistep_eval(
        &seqs,
        &ids,
        &target.ck.params,
        history,
        horizon,
        &target.opts,
        ds.norm.as_ref(),
    )?;

    let dir = &target.dir;
    create_dir(dir)?;
    let names = [
        "forecast_metrics.csv",
        "forecast_picp.csv",
        "forecast_intervals.csv",
        "forecast_samples.csv",
    ];
    write_report(dir, &out, names[0], names[1], names[2])?;
    write_file(dir, names[3], |w| write_samples_csv(&out.forecasts, w))?;
    let mut m = target.manifest("forecast", s)?;
    for n in names {
        m.output(dir, n)?;
    }
    m.write(dir)?;
    println!("history {history}, horizon {horizon}: {}", summary(&out));
    Ok(())
}
