use std::collections::VecDeque;

use super::params::{HeadKind, ModelParams, ObservationHead};
use crate::error::{Error, Result};
use crate::numkit::{self, SeededRng};

/// One particle's latent state at one step, with the standard-normal draws
/// that produced it.
///
/// `z`, `mu` and `eps_z` are empty for the first step of a sequence, which
/// has no attention window.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    pub z: Vec<f64>,
    pub mu: Vec<f64>,
    pub eps_q: Vec<f64>,
    pub eps_k: Vec<f64>,
    pub eps_v: Vec<f64>,
    pub eps_z: Vec<f64>,
}

impl LatentState {
    pub fn from_parts(qkv: QkvDraw, attn: Option<AttentionDraw>) -> Self {
        let (z, mu, eps_z) = match attn {
            Some(a) => (a.z, a.mu, a.eps_z),
            None => (Vec::new(), Vec::new(), Vec::new()),
        };
        Self {
            q: qkv.q,
            k: qkv.k,
            v: qkv.v,
            z,
            mu,
            eps_q: qkv.eps_q,
            eps_k: qkv.eps_k,
            eps_v: qkv.eps_v,
            eps_z,
        }
    }

    pub fn has_attention(&self) -> bool {
        !self.z.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QkvDraw {
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    pub eps_q: Vec<f64>,
    pub eps_k: Vec<f64>,
    pub eps_v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionDraw {
    pub z: Vec<f64>,
    /// Conditional mean `sum_s pi_s v(t-s)`.
    pub mu: Vec<f64>,
    pub eps_z: Vec<f64>,
}

/// The last `lag` states, most recent first.
#[derive(Debug, Clone)]
pub struct AttentionWindow {
    lag: usize,
    states: VecDeque<LatentState>,
}

impl AttentionWindow {
    pub fn new(lag: usize) -> Self {
        Self {
            lag,
            states: VecDeque::with_capacity(lag + 1),
        }
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    pub fn push(&mut self, state: LatentState) {
        self.states.push_front(state);
        self.states.truncate(self.lag);
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> Vec<&LatentState> {
        self.states.iter().collect()
    }
}

fn check_finite(x: &[f64], what: &str) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain(format!("{what} must be finite")));
    }
    Ok(())
}

/// Draw `(q, k, v) = W X + sqrt(var) eps` for one input vector.
pub fn project_qkv(x: &[f64], params: &ModelParams, rng: &mut SeededRng) -> Result<QkvDraw> {
    check_finite(x, "input")?;
    let n = &params.noise;
    let (q, eps_q) = numkit::gaussian_sample(&params.w_q.matvec(x)?, n.var_q.sqrt(), rng)?;
    let (k, eps_k) = numkit::gaussian_sample(&params.w_k.matvec(x)?, n.var_k.sqrt(), rng)?;
    let (v, eps_v) = numkit::gaussian_sample(&params.w_v.matvec(x)?, n.var_v.sqrt(), rng)?;
    Ok(QkvDraw {
        q,
        k,
        v,
        eps_q,
        eps_k,
        eps_v,
    })
}

/// `pi = softmax(<q_prev, k(t-s)> / sqrt(r))` over the window.
pub fn attention_weights(q_prev: &[f64], window: &[&LatentState]) -> Result<Vec<f64>> {
    if window.is_empty() {
        return Err(Error::domain("attention over an empty window"));
    }
    let scale = 1.0 / (q_prev.len() as f64).sqrt();
    let mut logits = Vec::with_capacity(window.len());
    for s in window {
        if s.k.len() != q_prev.len() {
            return Err(Error::shape("attention_weights", q_prev.len(), s.k.len()));
        }
        logits.push(numkit::dot(q_prev, &s.k) * scale);
    }
    numkit::softmax(&logits)
}

/// `mu = sum_s pi_s v(t-s)`.
pub(crate) fn attention_mean(pi: &[f64], window: &[&LatentState]) -> Result<Vec<f64>> {
    if pi.len() != window.len() || window.is_empty() {
        return Err(Error::shape("attention_vector", window.len(), pi.len()));
    }
    let mut mu = vec![0.0; window[0].v.len()];
    for (p, s) in pi.iter().zip(window) {
        for (m, v) in mu.iter_mut().zip(&s.v) {
            *m += p * v;
        }
    }
    Ok(mu)
}

/// Draw `z = mu + sqrt(var_z) eps_z`.
pub fn attention_vector(
    pi: &[f64],
    window: &[&LatentState],
    params: &ModelParams,
    rng: &mut SeededRng,
) -> Result<AttentionDraw> {
    let mu = attention_mean(pi, window)?;
    let (z, eps_z) = numkit::gaussian_sample(&mu, params.noise.var_z.sqrt(), rng)?;
    Ok(AttentionDraw { z, mu, eps_z })
}

/// `G(z)`. Consumes no randomness.
pub fn observation_mean(z: &[f64], head: &ObservationHead) -> Result<Vec<f64>> {
    match head.kind {
        HeadKind::Identity => Ok(z.to_vec()),
        HeadKind::FeedForward => {
            let mut hidden = head.ffn_in.matvec(z)?;
            for (h, b) in hidden.iter_mut().zip(&head.ffn_in_bias) {
                *h += b;
            }
            let hidden = numkit::relu(&hidden);
            let mut ff = head.ffn_out.matvec(&hidden)?;
            for (f, b) in ff.iter_mut().zip(&head.ffn_out_bias) {
                *f += b;
            }
            let resid = numkit::add(z, &ff);
            let normed = numkit::layer_norm(&resid, &head.ln_gain, &head.ln_bias, head.ln_epsilon)?;
            let mut out = head.out_proj.matvec(&normed)?;
            for (o, b) in out.iter_mut().zip(&head.out_bias) {
                *o += b;
            }
            Ok(out)
        }
    }
}

pub fn observation_logdensity(x: &[f64], z: &[f64], params: &ModelParams) -> Result<f64> {
    let mean = observation_mean(z, &params.head)?;
    numkit::log_gaussian_density(x, &mean, params.noise.var_obs)
}

/// Log-density of a state given its inputs: q, k, v about `W X_t` and z
/// about `mu_z`. The z term is skipped for a first-step state.
pub fn transition_logdensity(state: &LatentState, mu_z: &[f64], x: &[f64], params: &ModelParams) -> Result<f64> {
    let n = &params.noise;
    let mut total = numkit::log_gaussian_density(&state.q, &params.w_q.matvec(x)?, n.var_q)?;
    total += numkit::log_gaussian_density(&state.k, &params.w_k.matvec(x)?, n.var_k)?;
    total += numkit::log_gaussian_density(&state.v, &params.w_v.matvec(x)?, n.var_v)?;
    if state.has_attention() {
        total += numkit::log_gaussian_density(&state.z, mu_z, n.var_z)?;
    }
    Ok(total)
}

fn noiseless_state(x: &[f64], params: &ModelParams, attn: Option<AttentionDraw>) -> Result<LatentState> {
    let r = params.dims.depth;
    let qkv = QkvDraw {
        q: params.w_q.matvec(x)?,
        k: params.w_k.matvec(x)?,
        v: params.w_v.matvec(x)?,
        eps_q: vec![0.0; r],
        eps_k: vec![0.0; r],
        eps_v: vec![0.0; r],
    };
    Ok(LatentState::from_parts(qkv, attn))
}

/// Standard transformer recursion with every noise source switched off.
/// Returns `G(mu(t))` for `t = 2..T`.
pub fn deterministic_forward(xs: &[Vec<f64>], params: &ModelParams) -> Result<Vec<Vec<f64>>> {
    if xs.len() < 2 {
        return Err(Error::domain("deterministic_forward needs at least two steps"));
    }
    let mut window = AttentionWindow::new(params.dims.lag);
    window.push(noiseless_state(&xs[0], params, None)?);
    let mut preds = Vec::with_capacity(xs.len() - 1);
    for x in &xs[1..] {
        let states = window.states();
        let pi = attention_weights(&states[0].q, &states)?;
        let mu = attention_mean(&pi, &states)?;
        preds.push(observation_mean(&mu, &params.head)?);
        let attn = AttentionDraw {
            z: mu.clone(),
            eps_z: vec![0.0; mu.len()],
            mu,
        };
        let state = noiseless_state(x, params, Some(attn))?;
        window.push(state);
    }
    Ok(preds)
}

/// Simulate `len` observations from the generative model, starting at `x1`.
pub fn sample_sequence(params: &ModelParams, x1: &[f64], len: usize, rng: &mut SeededRng) -> Result<Vec<Vec<f64>>> {
    if params.dims.d_in != params.dims.d_obs {
        return Err(Error::domain("sampling sequences requires d_in == d_obs"));
    }
    if len == 0 {
        return Ok(Vec::new());
    }
    let mut xs = vec![x1.to_vec()];
    let mut window = AttentionWindow::new(params.dims.lag);
    window.push(LatentState::from_parts(project_qkv(x1, params, rng)?, None));
    let obs_std = params.noise.var_obs.sqrt();
    while xs.len() < len {
        let states = window.states();
        let pi = attention_weights(&states[0].q, &states)?;
        let attn = attention_vector(&pi, &states, params, rng)?;
        let mean = observation_mean(&attn.z, &params.head)?;
        let (x, _) = numkit::gaussian_sample(&mean, obs_std, rng)?;
        let qkv = project_qkv(&x, params, rng)?;
        window.push(LatentState::from_parts(qkv, Some(attn)));
        xs.push(x);
    }
    Ok(xs)
}
