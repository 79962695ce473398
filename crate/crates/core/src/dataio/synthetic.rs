use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SeriesDataset;
use crate::error::{Error, Result};
use crate::numkit::SeededRng;

const INIT_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;
const REGIME_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    /// `X_{t+1} = alpha X_t + sigma eps`.
    I,
    /// `X_{t+1} = (alpha U + beta (1 - U)) X_t + sigma eps`, `U ~ Bernoulli(p)`.
    II,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" | "i" | "1" => Ok(ModelKind::I),
            "II" | "ii" | "2" => Ok(ModelKind::II),
            _ => Err(Error::domain(format!(
                "unknown synthetic model {s:?}, expected I or II"
            ))),
        }
    }
}

/// Autoregressive generator settings. Series are `X_1..X_T` after an
/// unobserved `X_0 ~ N(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub model: ModelKind,
    pub alpha: f64,
    pub beta: f64,
    pub sigma2: f64,
    pub p: f64,
    pub n_series: usize,
    pub len: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// `alpha = 0.8`, `sigma2 = 0.5`.
    pub fn model_i(n_series: usize, len: usize, seed: u64) -> Self {
        Self {
            model: ModelKind::I,
            alpha: 0.8,
            beta: 0.0,
            sigma2: 0.5,
            p: 1.0,
            n_series,
            len,
            seed,
        }
    }

    /// `alpha = 0.9`, `beta = 0.6 alpha`, `p = 0.7`, `sigma2 = 0.3`.
    pub fn model_ii(n_series: usize, len: usize, seed: u64) -> Self {
        Self {
            model: ModelKind::II,
            alpha: 0.9,
            beta: 0.54,
            sigma2: 0.3,
            p: 0.7,
            n_series,
            len,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::domain(format!("sigma2 must be > 0, got {}", self.sigma2)));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::domain(format!("p must lie in [0, 1], got {}", self.p)));
        }
        if self.len < 2 {
            return Err(Error::domain("series length must be >= 2"));
        }
        if self.n_series == 0 {
            return Err(Error::domain("n_series must be >= 1"));
        }
        if !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::domain("alpha and beta must be finite"));
        }
        Ok(())
    }

    /// `(probability, conditional mean)` of each regime for the next value
    /// given the current one.
    pub fn modes(&self, x: f64) -> Vec<(f64, f64)> {
        match self.model {
            ModelKind::I => vec![(1.0, self.alpha * x)],
            ModelKind::II => vec![(self.p, self.alpha * x), (1.0 - self.p, self.beta * x)],
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

fn generate(spec: &SyntheticSpec, switching: bool) -> Result<SeriesDataset> {
    spec.validate()?;
    let root = SeededRng::new(spec.seed);
    let sigma = spec.sigma2.sqrt();
    let data = (0..spec.n_series)
        .map(|i| {
            let mut init = root.derive(&[i as u64, INIT_STREAM]);
            let mut noise = root.derive(&[i as u64, NOISE_STREAM]);
            let mut regime = root.derive(&[i as u64, REGIME_STREAM]);
            let mut x = init.normal();
            (0..spec.len)
                .map(|_| {
                    let coef = if !switching || regime.bernoulli(spec.p) {
                        spec.alpha
                    } else {
                        spec.beta
                    };
                    x = coef * x + sigma * noise.normal();
                    vec![x]
                })
                .collect()
        })
        .collect();
    SeriesDataset::new(
        (0..spec.n_series).map(|i| i.to_string()).collect(),
        vec!["f0".into()],
        data,
    )
}

#[allow(non_snake_case)]
pub fn gen_model_I(spec: &SyntheticSpec) -> Result<SeriesDataset> {
    if spec.model != ModelKind::I {
        return Err(Error::domain("gen_model_I needs a Model I spec"));
    }
    generate(spec, false)
}

#[allow(non_snake_case)]
pub fn gen_model_II(spec: &SyntheticSpec) -> Result<SeriesDataset> {
    if spec.model != ModelKind::II {
        return Err(Error::domain("gen_model_II needs a Model II spec"));
    }
    generate(spec, true)
}

/// Dispatches on `spec.model`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SeriesDataset> {
    generate(spec, spec.model == ModelKind::II)
}
