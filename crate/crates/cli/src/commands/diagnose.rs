use anyhow::Result;
use rayon::prelude::*;

use smct_core::numkit::SeededRng;
use smct_core::smc::{filter_sequence, AncestryReport, AncestrySummary};

use super::{create_dir, write_file};
use crate::commands::evaluate::Target;
use crate::settings::Settings;
use crate::{DiagnoseArgs, EvalCommon};

pub const SUMMARY_FILE: &str = "ancestry_summary.csv";
pub const COUNTS_FILE: &str = "ancestry_counts.csv";

/// Filters each sequence of the split and records how many distinct
/// ancestors the final particles have at every lag.
pub fn diagnose(a: DiagnoseArgs, s: &mut Settings) -> Result<()> {
    let common = EvalCommon {
        checkpoint: a.checkpoint,
        data: a.data,
        split: a.split,
        particles: Some(s.value("particles", a.particles, 60usize)?),
        samples: None,
        level: None,
        seed: a.seed,
        out_dir: a.out_dir,
    };
    let target = Target::resolve(common, s, false)?;
    s.finish()?;

    let (_, seqs, ids) = target.load()?;
    let root = SeededRng::new(target.opts.seed);
    let reports = seqs
        .par_iter()
        .enumerate()
        .map(|(i, xs)| {
            let out = filter_sequence(xs, &target.ck.params, target.opts.particles, &root.derive(&[i as u64]))?;
            Ok(out.cloud.unique_ancestors())
        })
        .collect::<smct_core::Result<Vec<AncestryReport>>>()?;
    let summary = AncestrySummary::from_reports(&reports)?;

    let dir = &target.dir;
    create_dir(dir)?;
    summary.save(&dir.join(SUMMARY_FILE))?;
    write_file(dir, COUNTS_FILE, |w| {
        use std::io::Write;
        writeln!(w, "series_id,lag,unique")?;
        for (id, r) in ids.iter().zip(&reports) {
            for (l, c) in r.counts.iter().enumerate() {
                writeln!(w, "{id},{},{c}", l + 1)?;
            }
        }
        Ok(())
    })?;
    let mut m = target.manifest("diagnose", s)?;
    m.output(dir, SUMMARY_FILE)?;
    m.output(dir, COUNTS_FILE)?;
    m.write(dir)?;
    if let Some(last) = summary.rows.last() {
        println!(
            "{} sequences, {} particles: mean unique ancestors {} at lag {}",
            reports.len(),
            target.opts.particles,
            last.mean_unique,
            last.lag
        );
    }
    Ok(())
}
