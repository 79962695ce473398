//! Particle filter over the latent attention states.
//!
//! Each step resamples ancestors multinomially from the current weights,
//! extends every particle by one state drawn from the model transition
//! (attention over its ancestor's window, then `(q, k, v)` from the new
//! observation), and reweights by the observation density. Every generation
//! is kept together with its ancestor indices, so full genealogical
//! trajectories can be read back for the loss, EM and the degeneracy report.

mod ancestry;

pub use ancestry::{AncestryReport, AncestrySummary, AncestrySummaryRow};

use crate::error::{Error, Result};
use crate::model::{self, LatentState, ModelParams};
use crate::numkit::{self, SeededRng};

/// Key component reserved for the resampling stream of a step.
const RESAMPLE_STREAM: u64 = u64::MAX;

/// Particles born at one step, with the index of each one's parent in the
/// previous generation (empty for the first step).
#[derive(Debug, Clone)]
pub struct Generation {
    pub states: Vec<LatentState>,
    pub ancestors: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ParticleCloud {
    n_particles: usize,
    lag: usize,
    generations: Vec<Generation>,
    weights: Vec<f64>,
    log_norm_const: f64,
}

/// Multinomial resampling: `n` i.i.d. draws from the categorical `weights`.
pub fn resample_indices(weights: &[f64], n: usize, rng: &mut SeededRng) -> Result<Vec<usize>> {
    if weights.is_empty() {
        return Err(Error::domain("cannot resample from zero particles"));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::domain("weights must be non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::domain(format!("weights must be normalized, sum is {total}")));
    }
    let mut cdf = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cdf.push(acc);
    }
    let last = weights.iter().rposition(|w| *w > 0.0).unwrap_or(0);
    Ok((0..n)
        .map(|_| {
            let u = rng.uniform() * acc;
            cdf.partition_point(|c| *c <= u).min(last)
        })
        .collect())
}

/// `1 / sum(w^2)`.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

impl ParticleCloud {
    /// An empty cloud; call [`ParticleCloud::initialize`] with the first
    /// observation before propagating.
    pub fn new(n_particles: usize, lag: usize) -> Result<Self> {
        if n_particles == 0 {
            return Err(Error::domain("particle count must be >= 1"));
        }
        if lag == 0 {
            return Err(Error::domain("attention lag must be >= 1"));
        }
        Ok(Self {
            n_particles,
            lag,
            generations: Vec::new(),
            weights: vec![1.0 / n_particles as f64; n_particles],
            log_norm_const: 0.0,
        })
    }

    /// A cloud assembled from explicit generations, for hand-built cases.
    #[cfg(test)]
    pub(crate) fn from_parts(lag: usize, generations: Vec<Generation>, weights: Vec<f64>) -> Self {
        Self {
            n_particles: weights.len(),
            lag,
            generations,
            weights,
            log_norm_const: 0.0,
        }
    }

    /// Draws `(q, k, v)` from `x1` for every particle; weights stay uniform.
    pub fn initialize(&mut self, x1: &[f64], params: &ModelParams, rng: &SeededRng) -> Result<()> {
        if !self.generations.is_empty() {
            return Err(Error::domain("cloud already initialized"));
        }
        let states = (0..self.n_particles)
            .map(|m| {
                let mut r = rng.derive(&[1, m as u64]);
                model::project_qkv(x1, params, &mut r).map(|d| LatentState::from_parts(d, None))
            })
            .collect::<Result<Vec<_>>>()?;
        self.generations.push(Generation {
            states,
            ancestors: Vec::new(),
        });
        Ok(())
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    /// Number of observations absorbed so far.
    pub fn steps(&self) -> usize {
        self.generations.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_norm_const(&self) -> f64 {
        self.log_norm_const
    }

    pub fn generations(&self) -> &[Generation] {
        &self.generations
    }

    pub fn current(&self) -> Option<&Generation> {
        self.generations.last()
    }

    /// Lineage of particle `m` of generation `gen` (0-based), most recent
    /// first, truncated to the attention lag.
    pub fn window_at(&self, gen: usize, m: usize) -> Vec<&LatentState> {
        let mut out = Vec::with_capacity(self.lag);
        let mut g = gen;
        let mut idx = m;
        loop {
            out.push(&self.generations[g].states[idx]);
            if out.len() == self.lag || g == 0 {
                break;
            }
            idx = self.generations[g].ancestors[idx];
            g -= 1;
        }
        out
    }

    /// Window particle `m` would attend over at the next step.
    pub fn window(&self, m: usize) -> Vec<&LatentState> {
        self.window_at(self.generations.len() - 1, m)
    }

    /// Index at generation `gen` of the ancestor of current particle `m`.
    pub fn ancestor_at(&self, m: usize, gen: usize) -> usize {
        let mut idx = m;
        for g in (gen + 1..self.generations.len()).rev() {
            idx = self.generations[g].ancestors[idx];
        }
        idx
    }

    /// Selection then mutation at the next step.
    pub fn propagate(&mut self, x: &[f64], params: &ModelParams, rng: &SeededRng) -> Result<()> {
        let t = self.generations.len() as u64 + 1;
        let mut r = rng.derive(&[t, RESAMPLE_STREAM]);
        let indices = resample_indices(&self.weights, self.n_particles, &mut r)?;
        self.propagate_with_indices(&indices, x, params, rng)
    }

    /// Mutation with explicit ancestor indices.
    pub fn propagate_with_indices(
        &mut self,
        indices: &[usize],
        x: &[f64],
        params: &ModelParams,
        rng: &SeededRng,
    ) -> Result<()> {
        if self.generations.is_empty() {
            return Err(Error::domain("propagate before any observation"));
        }
        if indices.len() != self.n_particles || indices.iter().any(|&i| i >= self.n_particles) {
            return Err(Error::domain("ancestor indices must be M values in 0..M"));
        }
        let t = self.generations.len() as u64 + 1;
        let states = indices
            .iter()
            .enumerate()
            .map(|(m, &parent)| {
                let mut r = rng.derive(&[t, m as u64]);
                let window = self.window(parent);
                let pi = model::attention_weights(&window[0].q, &window)?;
                let attn = model::attention_vector(&pi, &window, params, &mut r)?;
                let qkv = model::project_qkv(x, params, &mut r)?;
                Ok(LatentState::from_parts(qkv, Some(attn)))
            })
            .collect::<Result<Vec<_>>>()?;
        self.generations.push(Generation {
            states,
            ancestors: indices.to_vec(),
        });
        Ok(())
    }

    /// Reweights the current generation by `p(x | z)`, normalized in log
    /// space, and adds `log(mean unnormalized weight)` to the running
    /// log normalizing constant.
    pub fn compute_weights(&mut self, x: &[f64], params: &ModelParams) -> Result<&[f64]> {
        let gen = self
            .generations
            .last()
            .ok_or_else(|| Error::domain("no particles to weight"))?;
        if !(params.noise.var_obs > 0.0) {
            return Err(Error::domain("var_obs must be > 0 to compute weights"));
        }
        let log_w = gen
            .states
            .iter()
            .map(|s| {
                if !s.has_attention() {
                    return Err(Error::domain("first-step particles carry no attention vector"));
                }
                model::observation_logdensity(x, &s.z, params)
            })
            .collect::<Result<Vec<_>>>()?;
        let lse = numkit::log_sum_exp(&log_w);
        if !lse.is_finite() {
            return Err(Error::Numerical(format!(
                "all particle weights underflowed at step {}",
                self.generations.len()
            )));
        }
        // Shift by the max rather than the lse: at large magnitudes
        // `l - lse` loses the small differences between particles.
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let shifted: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = shifted.iter().sum();
        self.weights = shifted.iter().map(|e| e / total).collect();
        self.log_norm_const += lse - (self.n_particles as f64).ln();
        Ok(&self.weights)
    }

    /// Weighted mean of `G(mu)` over particles: the point forecast of the
    /// next observation.
    pub fn point_prediction(&self, params: &ModelParams) -> Result<Vec<f64>> {
        let mut out = vec![0.0; params.dims.d_obs];
        for (m, w) in self.weights.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            let window = self.window(m);
            let pi = model::attention_weights(&window[0].q, &window)?;
            let mu = model::cell_attention_mean(&pi, &window)?;
            let g = model::observation_mean(&mu, &params.head)?;
            for (o, v) in out.iter_mut().zip(g) {
                *o += w * v;
            }
        }
        Ok(out)
    }

    pub fn unique_ancestors(&self) -> AncestryReport {
        AncestryReport::from_cloud(self)
    }
}

/// Filter run over one sequence.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub cloud: ParticleCloud,
    /// Normalized weights after each step `t = 1..T`.
    pub step_weights: Vec<Vec<f64>>,
    /// Point forecasts of `X_t` for `t = 2..T`, from the cloud at `t - 1`.
    pub predictions: Vec<Vec<f64>>,
    /// `sum_t log(mean unnormalized weight)`.
    pub log_likelihood: f64,
}

/// Runs the filter over `xs` with the lag taken from `params.dims`.
pub fn filter_sequence(
    xs: &[Vec<f64>],
    params: &ModelParams,
    n_particles: usize,
    rng: &SeededRng,
) -> Result<FilterOutput> {
    if xs.len() < 2 {
        return Err(Error::domain("filtering needs at least two observations"));
    }
    let mut cloud = ParticleCloud::new(n_particles, params.dims.lag)?;
    cloud.initialize(&xs[0], params, rng)?;
    let mut step_weights = Vec::with_capacity(xs.len());
    step_weights.push(cloud.weights().to_vec());
    let mut predictions = Vec::with_capacity(xs.len() - 1);
    for x in &xs[1..] {
        predictions.push(cloud.point_prediction(params)?);
        cloud.propagate(x, params, rng)?;
        step_weights.push(cloud.compute_weights(x, params)?.to_vec());
    }
    let log_likelihood = cloud.log_norm_const();
    Ok(FilterOutput {
        cloud,
        step_weights,
        predictions,
        log_likelihood,
    })
}
