use crate::error::{Error, Result};
use crate::model::{self, LatentState, ModelParams};
use crate::numkit::{self, SeededRng};
use crate::smc::{self, ParticleCloud};

/// Draws per predicted step: `steps x n_samples x d_obs`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveSamples {
    pub steps: Vec<Vec<Vec<f64>>>,
}

impl PredictiveSamples {
    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    /// Per step, the mean of the draws.
    pub fn means(&self) -> Vec<Vec<f64>> {
        self.steps
            .iter()
            .map(|draws| {
                let n = draws.len() as f64;
                let mut m = vec![0.0; draws[0].len()];
                for d in draws {
                    for (a, v) in m.iter_mut().zip(d) {
                        *a += v;
                    }
                }
                m.iter().map(|a| a / n).collect()
            })
            .collect()
    }

    /// Per step, the unbiased sample variance of each feature.
    pub fn variances(&self) -> Vec<Vec<f64>> {
        self.means()
            .iter()
            .zip(&self.steps)
            .map(|(m, draws)| {
                let n = draws.len() as f64;
                let mut v = vec![0.0; m.len()];
                for d in draws {
                    for ((acc, x), mu) in v.iter_mut().zip(d).zip(m) {
                        *acc += (x - mu) * (x - mu);
                    }
                }
                v.iter().map(|s| s / (n - 1.0).max(1.0)).collect()
            })
            .collect()
    }
}

fn check_ready(cloud: &ParticleCloud, n_samples: usize) -> Result<()> {
    if n_samples < 1 {
        return Err(Error::domain("n_samples must be >= 1"));
    }
    if cloud.steps() == 0 {
        return Err(Error::domain("the filter has not absorbed any observation"));
    }
    Ok(())
}

/// One transition from `window` (most recent first): the attention draw
/// and an observation drawn around `G(z)`.
fn draw_next(
    window: &[&LatentState],
    params: &ModelParams,
    rng: &mut SeededRng,
) -> Result<(model::AttentionDraw, Vec<f64>)> {
    let pi = model::attention_weights(&window[0].q, window)?;
    let attn = model::attention_vector(&pi, window, params, rng)?;
    let mean = model::observation_mean(&attn.z, &params.head)?;
    let (x, _) = numkit::gaussian_sample(&mean, params.noise.var_obs.sqrt(), rng)?;
    Ok((attn, x))
}

/// `n_samples` draws of the next observation from the particle mixture:
/// pick a particle by weight, draw its attention vector, then the
/// observation.
pub fn sample_predictive(
    cloud: &ParticleCloud,
    params: &ModelParams,
    n_samples: usize,
    rng: &mut SeededRng,
) -> Result<Vec<Vec<f64>>> {
    check_ready(cloud, n_samples)?;
    let picks = smc::resample_indices(cloud.weights(), n_samples, rng)?;
    picks
        .into_iter()
        .map(|m| draw_next(&cloud.window(m), params, rng).map(|(_, x)| x))
        .collect()
}

/// Autoregressive rollout over `horizon` steps without reweighting: each
/// path starts from a particle picked by weight and feeds its own draws
/// back as inputs. With `horizon == 1` the draws equal
/// [`sample_predictive`] under the same generator state.
pub fn multistep_forecast(
    cloud: &ParticleCloud,
    params: &ModelParams,
    horizon: usize,
    n_samples: usize,
    rng: &mut SeededRng,
) -> Result<PredictiveSamples> {
    if horizon < 1 {
        return Err(Error::domain("forecast horizon must be >= 1"));
    }
    check_ready(cloud, n_samples)?;
    let picks = smc::resample_indices(cloud.weights(), n_samples, rng)?;
    let mut steps = vec![Vec::with_capacity(n_samples); horizon];
    for m in picks {
        let mut window: Vec<LatentState> = cloud.window(m).into_iter().cloned().collect();
        for (h, out) in steps.iter_mut().enumerate() {
            let refs: Vec<&LatentState> = window.iter().collect();
            let (attn, x) = draw_next(&refs, params, rng)?;
            if h + 1 < horizon {
                let qkv = model::project_qkv(&x, params, rng)?;
                window.insert(0, LatentState::from_parts(qkv, Some(attn)));
                window.truncate(cloud.lag());
            }
            out.push(x);
        }
    }
    Ok(PredictiveSamples { steps })
}
