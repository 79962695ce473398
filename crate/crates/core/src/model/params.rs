use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Mat, SeededRng};

pub const DEFAULT_LN_EPSILON: f64 = 1e-6;
pub const DEFAULT_INIT_VARIANCE: f64 = 0.5;

/// Architecture sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d_in: usize,
    /// Model depth: size of q, k, v and z.
    pub depth: usize,
    pub d_ff: usize,
    pub d_obs: usize,
    /// Attention window length.
    pub lag: usize,
}

impl Dims {
    /// Depth and feed-forward width 32, the reproduction defaults.
    pub fn for_features(d: usize, lag: usize) -> Self {
        Self {
            d_in: d,
            depth: 32,
            d_ff: 32,
            d_obs: d,
            lag,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.depth == 0 || self.d_ff == 0 || self.d_obs == 0 {
            return Err(Error::domain(format!("all dimensions must be >= 1: {self:?}")));
        }
        if self.lag == 0 {
            return Err(Error::domain("attention lag must be >= 1"));
        }
        Ok(())
    }
}

/// Isotropic noise variances of the five Gaussian sources.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseScales {
    pub var_q: f64,
    pub var_k: f64,
    pub var_v: f64,
    pub var_z: f64,
    pub var_obs: f64,
}

impl NoiseScales {
    pub fn uniform(v: f64) -> Self {
        Self {
            var_q: v,
            var_k: v,
            var_v: v,
            var_z: v,
            var_obs: v,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.named() {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::domain(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("var_q", self.var_q),
            ("var_k", self.var_k),
            ("var_v", self.var_v),
            ("var_z", self.var_z),
            ("var_obs", self.var_obs),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// `out_proj . LN(z + ffn(z)) + out_bias`.
    FeedForward,
    /// `G(z) = z`; requires `d_obs == depth`. Used for linear-Gaussian checks.
    Identity,
}

/// The observation mean map `G`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationHead {
    pub kind: HeadKind,
    pub ffn_in: Mat,
    pub ffn_in_bias: Vec<f64>,
    pub ffn_out: Mat,
    pub ffn_out_bias: Vec<f64>,
    pub ln_gain: Vec<f64>,
    pub ln_bias: Vec<f64>,
    pub out_proj: Mat,
    pub out_bias: Vec<f64>,
    pub ln_epsilon: f64,
}

/// Every learnable tensor. Noise variances are not in this list: they are
/// fitted by EM, never by gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ParamId {
    Wq,
    Wk,
    Wv,
    FfnIn,
    FfnInBias,
    FfnOut,
    FfnOutBias,
    LnGain,
    LnBias,
    OutProj,
    OutBias,
}

impl ParamId {
    pub const ALL: [ParamId; 11] = [
        ParamId::Wq,
        ParamId::Wk,
        ParamId::Wv,
        ParamId::FfnIn,
        ParamId::FfnInBias,
        ParamId::FfnOut,
        ParamId::FfnOutBias,
        ParamId::LnGain,
        ParamId::LnBias,
        ParamId::OutProj,
        ParamId::OutBias,
    ];

    pub fn key(self) -> usize {
        self as usize
    }

    pub fn from_key(key: usize) -> Option<ParamId> {
        Self::ALL.get(key).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamId::Wq => "w_q",
            ParamId::Wk => "w_k",
            ParamId::Wv => "w_v",
            ParamId::FfnIn => "ffn_in",
            ParamId::FfnInBias => "ffn_in_bias",
            ParamId::FfnOut => "ffn_out",
            ParamId::FfnOutBias => "ffn_out_bias",
            ParamId::LnGain => "ln_gain",
            ParamId::LnBias => "ln_bias",
            ParamId::OutProj => "out_proj",
            ParamId::OutBias => "out_bias",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: Dims,
    pub w_q: Mat,
    pub w_k: Mat,
    pub w_v: Mat,
    pub head: ObservationHead,
    pub noise: NoiseScales,
}

fn uniform_mat(rows: usize, cols: usize, rng: &mut SeededRng) -> Mat {
    let bound = (1.0 / cols as f64).sqrt();
    Mat::from_fn(rows, cols, |_, _| rng.uniform_range(-bound, bound))
}

impl ModelParams {
    /// Weights uniform in `±sqrt(1/fan_in)`, biases zero, LN gain one,
    /// every noise variance 0.5.
    pub fn init(dims: Dims, rng: &mut SeededRng) -> Result<Self> {
        dims.validate()?;
        let Dims {
            d_in,
            depth,
            d_ff,
            d_obs,
            ..
        } = dims;
        let params = Self {
            dims,
            w_q: uniform_mat(depth, d_in, rng),
            w_k: uniform_mat(depth, d_in, rng),
            w_v: uniform_mat(depth, d_in, rng),
            head: ObservationHead {
                kind: HeadKind::FeedForward,
                ffn_in: uniform_mat(d_ff, depth, rng),
                ffn_in_bias: vec![0.0; d_ff],
                ffn_out: uniform_mat(depth, d_ff, rng),
                ffn_out_bias: vec![0.0; depth],
                ln_gain: vec![1.0; depth],
                ln_bias: vec![0.0; depth],
                out_proj: uniform_mat(d_obs, depth, rng),
                out_bias: vec![0.0; d_obs],
                ln_epsilon: DEFAULT_LN_EPSILON,
            },
            noise: NoiseScales::uniform(DEFAULT_INIT_VARIANCE),
        };
        Ok(params)
    }

    /// All weights zero, LN gain one; handy for hand-built examples.
    pub fn zeros(dims: Dims, noise: NoiseScales) -> Result<Self> {
        dims.validate()?;
        noise.validate()?;
        let Dims {
            d_in,
            depth,
            d_ff,
            d_obs,
            ..
        } = dims;
        Ok(Self {
            dims,
            w_q: Mat::zeros(depth, d_in),
            w_k: Mat::zeros(depth, d_in),
            w_v: Mat::zeros(depth, d_in),
            head: ObservationHead {
                kind: HeadKind::FeedForward,
                ffn_in: Mat::zeros(d_ff, depth),
                ffn_in_bias: vec![0.0; d_ff],
                ffn_out: Mat::zeros(depth, d_ff),
                ffn_out_bias: vec![0.0; depth],
                ln_gain: vec![1.0; depth],
                ln_bias: vec![0.0; depth],
                out_proj: Mat::zeros(d_obs, depth),
                out_bias: vec![0.0; d_obs],
                ln_epsilon: DEFAULT_LN_EPSILON,
            },
            noise,
        })
    }

    pub fn shape(&self, id: ParamId) -> (usize, usize) {
        let Dims {
            d_in,
            depth,
            d_ff,
            d_obs,
            ..
        } = self.dims;
        match id {
            ParamId::Wq | ParamId::Wk | ParamId::Wv => (depth, d_in),
            ParamId::FfnIn => (d_ff, depth),
            ParamId::FfnInBias => (d_ff, 1),
            ParamId::FfnOut => (depth, d_ff),
            ParamId::FfnOutBias | ParamId::LnGain | ParamId::LnBias => (depth, 1),
            ParamId::OutProj => (d_obs, depth),
            ParamId::OutBias => (d_obs, 1),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        let h = &self.head;
        match id {
            ParamId::Wq => self.w_q.as_slice(),
            ParamId::Wk => self.w_k.as_slice(),
            ParamId::Wv => self.w_v.as_slice(),
            ParamId::FfnIn => h.ffn_in.as_slice(),
            ParamId::FfnInBias => &h.ffn_in_bias,
            ParamId::FfnOut => h.ffn_out.as_slice(),
            ParamId::FfnOutBias => &h.ffn_out_bias,
            ParamId::LnGain => &h.ln_gain,
            ParamId::LnBias => &h.ln_bias,
            ParamId::OutProj => h.out_proj.as_slice(),
            ParamId::OutBias => &h.out_bias,
        }
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        let h = &mut self.head;
        match id {
            ParamId::Wq => self.w_q.as_mut_slice(),
            ParamId::Wk => self.w_k.as_mut_slice(),
            ParamId::Wv => self.w_v.as_mut_slice(),
            ParamId::FfnIn => h.ffn_in.as_mut_slice(),
            ParamId::FfnInBias => &mut h.ffn_in_bias,
            ParamId::FfnOut => h.ffn_out.as_mut_slice(),
            ParamId::FfnOutBias => &mut h.ffn_out_bias,
            ParamId::LnGain => &mut h.ln_gain,
            ParamId::LnBias => &mut h.ln_bias,
            ParamId::OutProj => h.out_proj.as_mut_slice(),
            ParamId::OutBias => &mut h.out_bias,
        }
    }

    /// Checks shapes, finiteness and the head/dimension contract.
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        self.noise.validate()?;
        for id in ParamId::ALL {
            let (r, c) = self.shape(id);
            let v = self.get(id);
            if v.len() != r * c {
                return Err(Error::shape(
                    "ModelParams",
                    format!("{} of {}x{}", id.name(), r, c),
                    v.len(),
                ));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numerical(format!("non-finite entry in {}", id.name())));
            }
        }
        if self.head.kind == HeadKind::Identity && self.dims.d_obs != self.dims.depth {
            return Err(Error::domain("identity head requires d_obs == depth"));
        }
        if !(self.head.ln_epsilon > 0.0) {
            return Err(Error::domain("ln_epsilon must be positive"));
        }
        Ok(())
    }
}
