use anyhow::Result;

use smct_core::dataio::{generate_synthetic, write_csv, ModelKind, SyntheticSpec};

use super::{create_dir, out_dir, write_file};
use crate::manifest::Manifest;
use crate::settings::Settings;
use crate::GenerateArgs;

pub const DATA_FILE: &str = "data.csv";
pub const SPEC_FILE: &str = "spec.json";

pub fn generate(a: GenerateArgs, s: &mut Settings) -> Result<()> {
    let model = s.value("model", a.model, ModelKind::I)?;
    let n = s.value("n", a.n, 1000usize)?;
    let len = s.value("T", a.len, 24usize)?;
    let seed: u64 = s.required("seed", a.seed)?;
    let mut spec = match model {
        ModelKind::I => SyntheticSpec::model_i(n, len, seed),
        ModelKind::II => SyntheticSpec::model_ii(n, len, seed),
    };
    spec.alpha = s.value("alpha", a.alpha, spec.alpha)?;
    spec.beta = s.value("beta", a.beta, spec.beta)?;
    spec.sigma2 = s.value("sigma2", a.sigma2, spec.sigma2)?;
    spec.p = s.value("p", a.p, spec.p)?;
    let dir = out_dir(s, a.out_dir)?;
    s.finish()?;
    spec.validate()?;

    let ds = generate_synthetic(&spec)?;
    create_dir(&dir)?;
    write_file(&dir, DATA_FILE, |w| write_csv(&ds, w).map_err(std::io::Error::other))?;
    spec.save(&dir.join(SPEC_FILE))?;

    let mut m = Manifest::new("generate", seed, s.resolved());
    m.output(&dir, DATA_FILE)?;
    m.output(&dir, SPEC_FILE)?;
    m.write(&dir)?;
    println!(
        "wrote {} series of length {len} to {}",
        n,
        dir.join(DATA_FILE).display()
    );
    Ok(())
}
