use std::path::PathBuf;

use anyhow::{bail, Context, Result};

use smct_core::dataio::{CsvSchema, Split, SyntheticSpec};
use smct_core::model::{Dims, ModelParams};
use smct_core::numkit::SeededRng;
use smct_core::trainer::{fit, Checkpoint, EmSwitches, LrSchedule, TrainConfig};

use super::{create_dir, out_dir};
use crate::data::{parse_list, DataSource};
use crate::manifest::Manifest;
use crate::settings::Settings;
use crate::TrainArgs;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOG_FILE: &str = "train_log.csv";

fn parse_em(text: &str) -> Result<EmSwitches> {
    match text {
        "all" => return Ok(EmSwitches::all()),
        "none" => return Ok(EmSwitches::none()),
        _ => {}
    }
    let mut em = EmSwitches::none();
    for name in parse_list(text) {
        match name.as_str() {
            "q" => em.q = true,
            "k" => em.k = true,
            "v" => em.v = true,
            "z" => em.z = true,
            "obs" => em.obs = true,
            _ => bail!("unknown noise source {name:?} in --em, expected q, k, v, z or obs"),
        }
    }
    Ok(em)
}

pub fn train(a: TrainArgs, s: &mut Settings) -> Result<()> {
    let data_path: PathBuf = s.required("data", a.data)?;
    let spec_path: Option<PathBuf> = s.optional("spec", a.spec)?;
    let targets: Option<String> = s.optional("targets", a.targets)?;
    let schema = CsvSchema {
        targets: targets.as_deref().map(parse_list),
        window: s.optional("window", a.window)?,
        stride: s.optional("stride", a.stride)?,
    };
    let spec = spec_path
        .as_deref()
        .map(SyntheticSpec::load)
        .transpose()
        .context("reading the synthetic spec")?;
    let normalize = s.value("normalize", a.normalize, spec.is_none())?;

    let d = TrainConfig::default();
    let seed: u64 = s.required("seed", a.seed)?;
    let depth = s.value("depth", a.depth, 32usize)?;
    let d_ff = s.value("d_ff", a.d_ff, 32usize)?;
    let lr = s.value("lr", a.lr, 1e-3)?;
    let schedule = match s.optional("warmup", a.warmup)? {
        Some(warmup_steps) => LrSchedule::Warmup { warmup_steps },
        None => LrSchedule::Constant { lr },
    };
    let config = TrainConfig {
        particles: s.value("particles", a.particles, d.particles)?,
        lag: s.value("lag", a.lag, d.lag)?,
        epochs: s.value("epochs", a.epochs, d.epochs)?,
        batch_size: s.value("batch_size", a.batch_size, d.batch_size)?,
        schedule,
        em_exponent: s.value("em_exponent", a.em_exponent, d.em_exponent)?,
        em: parse_em(&s.value("em", a.em, "all".to_string())?)?,
        update_weights: s.value("update_weights", a.update_weights, d.update_weights)?,
        patience: s.optional("patience", a.patience)?,
        seed,
        ..d
    };
    let dir = out_dir(s, a.out_dir)?;
    s.finish()?;
    config.validate()?;

    let (src, ds) = DataSource::prepare(data_path.clone(), schema, spec, normalize, seed)?;
    let nf = ds.n_features();
    let dims = Dims {
        d_in: nf,
        depth,
        d_ff,
        d_obs: nf,
        lag: config.lag,
    };
    let init = ModelParams::init(dims, &mut SeededRng::new(seed))?;
    let outcome = fit(&ds.sequences(Split::Train), &ds.sequences(Split::Val), init, &config)?;

    create_dir(&dir)?;
    let ck = Checkpoint::new(outcome.params, outcome.opt, config, serde_json::to_value(&src)?);
    ck.save(&dir.join(CHECKPOINT_FILE))?;
    outcome.log.save(&dir.join(LOG_FILE))?;

    let mut m = Manifest::new("train", seed, s.resolved());
    m.input(&data_path)?;
    if let Some(p) = &spec_path {
        m.input(p)?;
    }
    m.output(&dir, CHECKPOINT_FILE)?;
    m.output(&dir, LOG_FILE)?;
    m.write(&dir)?;
    let best = outcome
        .log
        .rows
        .iter()
        .find(|r| r.epoch == outcome.best_epoch && r.split == "val");
    match best {
        Some(r) => println!("best epoch {} (val loss {}, val mse {})", r.epoch, r.loss, r.mse),
        None => println!("trained {} epochs", outcome.best_epoch),
    }
    Ok(())
}
