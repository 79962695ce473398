//! Taped mirrors of the cell operations, used by the training loss.
//!
//! States are rebuilt from their recorded standard-normal draws, so each
//! recorded value equals the filter's untaped value while depending on the
//! weights through the reparametrized means.

use super::cell::LatentState;
use super::params::{HeadKind, ModelParams, ParamId};
use crate::diffcore::{Tape, Var};
use crate::error::Result;

pub(crate) struct ParamVars {
    vars: Vec<Var>,
}

impl ParamVars {
    pub fn record(tape: &mut Tape, params: &ModelParams) -> Result<Self> {
        let mut vars = Vec::with_capacity(ParamId::ALL.len());
        for id in ParamId::ALL {
            let (r, c) = params.shape(id);
            vars.push(tape.param(id.key(), params.get(id), r, c)?);
        }
        Ok(Self { vars })
    }

    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.key()]
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct TapedQkv {
    pub q: Var,
    pub k: Var,
    pub v: Var,
    /// `W X` for each of q, k, v.
    pub means: [Var; 3],
}

fn reparam(tape: &mut Tape, mean: Var, std: f64, eps: &[f64]) -> Result<Var> {
    let noise = tape.constant(eps.iter().map(|e| std * e).collect());
    tape.add(mean, noise)
}

pub(crate) fn qkv(
    tape: &mut Tape,
    pv: &ParamVars,
    params: &ModelParams,
    x: Var,
    state: &LatentState,
) -> Result<TapedQkv> {
    let n = &params.noise;
    let mq = tape.matvec(pv.get(ParamId::Wq), x)?;
    let mk = tape.matvec(pv.get(ParamId::Wk), x)?;
    let mv = tape.matvec(pv.get(ParamId::Wv), x)?;
    Ok(TapedQkv {
        q: reparam(tape, mq, n.var_q.sqrt(), &state.eps_q)?,
        k: reparam(tape, mk, n.var_k.sqrt(), &state.eps_k)?,
        v: reparam(tape, mv, n.var_v.sqrt(), &state.eps_v)?,
        means: [mq, mk, mv],
    })
}

/// Attention mean over a window given most-recent-first keys and values.
pub(crate) fn attention_mean(tape: &mut Tape, q_prev: Var, keys: &[Var], values: &[Var]) -> Result<Var> {
    let depth = tape.shape(q_prev).0;
    let kmat = tape.stack_rows(keys)?;
    let raw = tape.matvec(kmat, q_prev)?;
    let logits = tape.scale(raw, 1.0 / (depth as f64).sqrt());
    let pi = tape.softmax(logits)?;
    tape.weighted_sum(pi, values)
}

pub(crate) fn attention_sample(tape: &mut Tape, params: &ModelParams, mu: Var, eps_z: &[f64]) -> Result<Var> {
    reparam(tape, mu, params.noise.var_z.sqrt(), eps_z)
}

pub(crate) fn observation_mean(tape: &mut Tape, pv: &ParamVars, params: &ModelParams, z: Var) -> Result<Var> {
    match params.head.kind {
        HeadKind::Identity => Ok(z),
        HeadKind::FeedForward => {
            let h = tape.matvec(pv.get(ParamId::FfnIn), z)?;
            let h = tape.add(h, pv.get(ParamId::FfnInBias))?;
            let h = tape.relu(h);
            let f = tape.matvec(pv.get(ParamId::FfnOut), h)?;
            let f = tape.add(f, pv.get(ParamId::FfnOutBias))?;
            let resid = tape.add(z, f)?;
            let normed = tape.layer_norm(
                resid,
                pv.get(ParamId::LnGain),
                pv.get(ParamId::LnBias),
                params.head.ln_epsilon,
            )?;
            let out = tape.matvec(pv.get(ParamId::OutProj), normed)?;
            tape.add(out, pv.get(ParamId::OutBias))
        }
    }
}
