//! Particle-weighted complete-data objective and the EM sufficient statistics.
//!
//! Both are sums over the ancestral lineages of the final particles. A state
//! shared by several lineages is visited once, carrying the summed final
//! weight of the particles that descend from it.

use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::taped::{self, ParamVars};
use crate::model::{self, ModelParams, NoiseScales};
use crate::numkit;
use crate::smc::ParticleCloud;

/// For every generation, the total final weight of the particles descending
/// from each of its states.
pub fn lineage_weights(cloud: &ParticleCloud, final_weights: &[f64]) -> Result<Vec<Vec<f64>>> {
    let gens = cloud.generations();
    if gens.is_empty() {
        return Err(Error::domain("empty particle cloud"));
    }
    if final_weights.len() != cloud.n_particles() {
        return Err(Error::shape(
            "lineage_weights",
            cloud.n_particles(),
            final_weights.len(),
        ));
    }
    let mut out = vec![Vec::new(); gens.len()];
    out[gens.len() - 1] = final_weights.to_vec();
    for g in (1..gens.len()).rev() {
        let mut parent = vec![0.0; cloud.n_particles()];
        for (w, &a) in out[g].iter().zip(&gens[g].ancestors) {
            parent[a] += w;
        }
        out[g - 1] = parent;
    }
    Ok(out)
}

fn check_inputs(cloud: &ParticleCloud, xs: &[Vec<f64>]) -> Result<()> {
    if cloud.steps() != xs.len() {
        return Err(Error::shape("smc_loss", cloud.steps(), xs.len()));
    }
    if xs.len() < 2 {
        return Err(Error::domain("the loss needs at least two observations"));
    }
    Ok(())
}

#[derive(Clone, Copy)]
struct TapedState {
    q: Var,
    k: Var,
    v: Var,
}

/// Records `-sum_m w_m sum_{t>=2} [ln p(state_t | past) + ln p(X_t | z_t)]`
/// over the lineages of `cloud`, with `final_weights` held constant.
///
/// States are rebuilt on the tape from their recorded standard-normal draws:
/// at the parameters that produced the cloud the recorded values are
/// reproduced exactly, and gradients flow through the reparametrized means.
pub(crate) fn smc_loss(
    tape: &mut Tape,
    pv: &ParamVars,
    cloud: &ParticleCloud,
    final_weights: &[f64],
    xs: &[Vec<f64>],
    params: &ModelParams,
) -> Result<Var> {
    check_inputs(cloud, xs)?;
    let n = &params.noise;
    for (name, v) in n.named() {
        if !(v > 0.0) {
            return Err(Error::domain(format!("{name} must be > 0 in the loss, got {v}")));
        }
    }
    let lw = lineage_weights(cloud, final_weights)?;
    let gens = cloud.generations();
    let lag = cloud.lag();
    let mut built: Vec<Vec<Option<TapedState>>> = vec![vec![None; cloud.n_particles()]; gens.len()];
    let mut terms = Vec::new();
    let mut coeffs = Vec::new();

    for (g, gen) in gens.iter().enumerate() {
        let x = tape.constant(xs[g].clone());
        for (i, state) in gen.states.iter().enumerate() {
            if lw[g][i] == 0.0 {
                continue;
            }
            let qkv = taped::qkv(tape, pv, params, x, state)?;
            built[g][i] = Some(TapedState {
                q: qkv.q,
                k: qkv.k,
                v: qkv.v,
            });
            if g == 0 {
                continue;
            }
            let parent = gen.ancestors[i];
            let (mut keys, mut values) = (Vec::with_capacity(lag), Vec::with_capacity(lag));
            let (mut pg, mut pi) = (g - 1, parent);
            loop {
                let s = built[pg][pi].expect("ancestors of a weighted state are built");
                keys.push(s.k);
                values.push(s.v);
                if keys.len() == lag || pg == 0 {
                    break;
                }
                pi = gens[pg].ancestors[pi];
                pg -= 1;
            }
            let q_prev = built[g - 1][parent].expect("parent is built").q;
            let mu = taped::attention_mean(tape, q_prev, &keys, &values)?;
            let z = taped::attention_sample(tape, params, mu, &state.eps_z)?;

            let lq = tape.log_gaussian(qkv.q, qkv.means[0], n.var_q)?;
            let lk = tape.log_gaussian(qkv.k, qkv.means[1], n.var_k)?;
            let lv = tape.log_gaussian(qkv.v, qkv.means[2], n.var_v)?;
            let lz = tape.log_gaussian(z, mu, n.var_z)?;
            let g_z = taped::observation_mean(tape, pv, params, z)?;
            let lo = tape.log_gaussian(x, g_z, n.var_obs)?;
            let s = tape.add(lq, lk)?;
            let s = tape.add(s, lv)?;
            let s = tape.add(s, lz)?;
            terms.push(tape.add(s, lo)?);
            coeffs.push(-lw[g][i]);
        }
    }
    let c = tape.constant(coeffs);
    tape.weighted_sum(c, &terms)
}

/// Value and parameter gradients of [`smc_loss`] at `params`.
pub fn smc_loss_and_grad(
    cloud: &ParticleCloud,
    final_weights: &[f64],
    xs: &[Vec<f64>],
    params: &ModelParams,
) -> Result<(f64, crate::diffcore::GradMap)> {
    let mut tape = Tape::new();
    let pv = ParamVars::record(&mut tape, params)?;
    let loss = smc_loss(&mut tape, &pv, cloud, final_weights, xs, params)?;
    let value = tape.scalar_value(loss);
    let grads = tape.backward(loss, 1.0)?.into_param_grads();
    Ok((value, grads))
}

/// Per-source EM statistics: the lineage-weighted mean squared residual per
/// coordinate of each noise source.
///
/// q, k and v residuals against `W X_t` are averaged over all `T` steps; z
/// residuals against the attention mean and observation residuals against
/// `G(z)` over the `T - 1` steps that carry an attention vector.
pub fn em_statistics(cloud: &ParticleCloud, xs: &[Vec<f64>], params: &ModelParams) -> Result<NoiseScales> {
    check_inputs(cloud, xs)?;
    let lw = lineage_weights(cloud, cloud.weights())?;
    let gens = cloud.generations();
    let mut acc = [0.0f64; 5];
    for (g, gen) in gens.iter().enumerate() {
        let x = &xs[g];
        let means = [params.w_q.matvec(x)?, params.w_k.matvec(x)?, params.w_v.matvec(x)?];
        for (i, s) in gen.states.iter().enumerate() {
            let w = lw[g][i];
            if w == 0.0 {
                continue;
            }
            acc[0] += w * numkit::squared_distance(&s.q, &means[0]);
            acc[1] += w * numkit::squared_distance(&s.k, &means[1]);
            acc[2] += w * numkit::squared_distance(&s.v, &means[2]);
            if g > 0 {
                acc[3] += w * numkit::squared_distance(&s.z, &s.mu);
                let pred = model::observation_mean(&s.z, &params.head)?;
                acc[4] += w * numkit::squared_distance(x, &pred);
            }
        }
    }
    let t = gens.len() as f64;
    let r = params.dims.depth as f64;
    let d = params.dims.d_obs as f64;
    Ok(NoiseScales {
        var_q: acc[0] / (t * r),
        var_k: acc[1] / (t * r),
        var_v: acc[2] / (t * r),
        var_z: acc[3] / ((t - 1.0) * r),
        var_obs: acc[4] / ((t - 1.0) * d),
    })
}
