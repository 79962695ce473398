//! Dense kernels, softmax, Gaussian sampling and densities, seeded streams.
//!
//! Everything here is a plain loop over `f64` slices. Model depth stays
//! small (r <= 64), so no linear-algebra backend is pulled in.

mod rng;

pub use rng::SeededRng;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::domain("matrix dimensions must be positive"));
        }
        if data.len() != rows * cols {
            return Err(Error::shape("Mat::from_vec", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::shape("matvec", self.cols, x.len()));
        }
        Ok(matvec_raw(&self.data, self.rows, self.cols, x))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `y = A x` for a row-major `rows x cols` slice. Lengths are not checked.
pub(crate) fn matvec_raw(a: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; rows];
    for (i, yi) in y.iter_mut().enumerate() {
        *yi = dot(&a[i * cols..(i + 1) * cols], x);
    }
    y
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

/// Numerically stable softmax (max-subtraction).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::domain("softmax of an empty array"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("softmax requires finite logits"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `ln(sum(exp(x)))`, returning `-inf` when every entry is `-inf`.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || !max.is_finite() {
        return max;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Empirical quantile of sorted data with the midpoint (Hazen) rule: the
/// i-th smallest of n values (1-based) sits at probability `(i - 0.5) / n`,
/// with linear interpolation between neighbours and clamping at the ends.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::domain("quantile of an empty sample"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("quantile level must be in [0, 1], got {p}")));
    }
    let n = sorted.len();
    let h = (n as f64 * p + 0.5).clamp(1.0, n as f64);
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo >= n {
        return Ok(sorted[n - 1]);
    }
    Ok(sorted[lo - 1] + frac * (sorted[lo] - sorted[lo - 1]))
}

/// Layer normalization output plus the normalized input and `1/std`,
/// which the tape reuses for its backward rule.
pub(crate) struct LayerNormParts {
    pub out: Vec<f64>,
    pub normalized: Vec<f64>,
    pub inv_std: f64,
}

pub(crate) fn layer_norm_parts(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> LayerNormParts {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + eps).sqrt();
    let normalized: Vec<f64> = x.iter().map(|v| (v - mean) * inv_std).collect();
    let out = normalized
        .iter()
        .zip(gain.iter().zip(bias))
        .map(|(h, (g, b))| g * h + b)
        .collect();
    LayerNormParts {
        out,
        normalized,
        inv_std,
    }
}

pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::domain("layer norm of an empty vector"));
    }
    if gain.len() != x.len() || bias.len() != x.len() {
        return Err(Error::shape("layer_norm", x.len(), gain.len().max(bias.len())));
    }
    if eps <= 0.0 {
        return Err(Error::domain("layer norm epsilon must be positive"));
    }
    Ok(layer_norm_parts(x, gain, bias, eps).out)
}

/// Draw `mean + std * eps` with `eps ~ N(0, I)`. Returns `(sample, eps)`.
pub fn gaussian_sample(mean: &[f64], std: f64, rng: &mut SeededRng) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(std >= 0.0) {
        return Err(Error::domain(format!("standard deviation must be >= 0, got {std}")));
    }
    let eps = rng.normal_vec(mean.len());
    let sample = mean.iter().zip(&eps).map(|(m, e)| m + std * e).collect();
    Ok((sample, eps))
}

/// Isotropic Gaussian log-density `ln N(x; mean, var I)`.
pub fn log_gaussian_density(x: &[f64], mean: &[f64], var: f64) -> Result<f64> {
    if x.len() != mean.len() {
        return Err(Error::shape("log_gaussian_density", mean.len(), x.len()));
    }
    if !(var > 0.0) {
        return Err(Error::domain(format!("variance must be > 0, got {var}")));
    }
    Ok(log_gaussian_unchecked(x, mean, var))
}

pub(crate) fn log_gaussian_unchecked(x: &[f64], mean: &[f64], var: f64) -> f64 {
    log_gaussian_norm(x.len(), var) + squared_distance(x, mean) * (-0.5 / var)
}

/// Gaussian log-density normalization constant `-d/2 ln(2 pi var)`.
pub(crate) fn log_gaussian_norm(d: usize, var: f64) -> f64 {
    -0.5 * d as f64 * (LN_2PI + var.ln())
}
