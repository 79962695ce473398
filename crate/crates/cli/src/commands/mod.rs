mod diagnose;
mod evaluate;
mod generate;
mod train;

pub use diagnose::diagnose;
pub use evaluate::{eval, forecast};
pub use generate::generate;
pub use train::train;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use crate::settings::Settings;

fn out_dir(s: &mut Settings, flag: Option<PathBuf>) -> Result<PathBuf> {
    s.required("out_dir", flag)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Writes `dir/name` through `body`.
fn write_file(dir: &Path, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    body(&mut w)
        .and_then(|()| w.flush())
        .with_context(|| format!("writing {}", path.display()))
}
