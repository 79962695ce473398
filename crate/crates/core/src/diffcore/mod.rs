//! Reverse-mode differentiation over the model's kernel set.
//!
//! A [`Tape`] records vector-valued nodes (matrix-vector products, softmax,
//! layer normalization, relu, squared norms and a few elementwise ops).
//! Forward values are computed with the same `numkit` kernels the untaped
//! model uses, so a recorded value is bitwise equal to direct evaluation.
//!
//! ```
//! use smct_core::diffcore::Tape;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(0, &[3.0], 1, 1).unwrap();
//! let y = tape.mul(x, x).unwrap();
//! assert_eq!(tape.scalar_value(y), 9.0);
//! let grads = tape.backward(y, 1.0).unwrap();
//! assert_eq!(grads.param_grads().get(0).unwrap(), &[6.0]);
//! ```

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numkit::{self, LayerNormParts};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf {
        param: Option<usize>,
    },
    MatVec(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    ScaleBy(Var, Var),
    Dot(Var, Var),
    Sum(Var),
    Index(Var, usize),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: f64,
    },
    WeightedSum {
        weights: Var,
        items: Vec<Var>,
    },
    StackRows(Vec<Var>),
    SquaredNorm(Var),
    StopGradient,
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    rows: usize,
    cols: usize,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    fn push(&mut self, value: Vec<f64>, rows: usize, cols: usize, op: Op) -> Var {
        self.nodes.push(Node { value, rows, cols, op });
        Var(self.nodes.len() - 1)
    }

    fn len_of(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    fn expect_vector(&self, v: Var, op: &'static str) -> Result<usize> {
        let n = &self.nodes[v.0];
        if n.cols != 1 {
            return Err(Error::shape(op, "column vector", format!("{}x{}", n.rows, n.cols)));
        }
        Ok(n.rows)
    }

    fn expect_scalar(&self, v: Var, op: &'static str) -> Result<()> {
        if self.len_of(v) != 1 {
            return Err(Error::shape(op, "scalar", self.len_of(v)));
        }
        Ok(())
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<(usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(
                op,
                format!("{}x{}", sa.0, sa.1),
                format!("{}x{}", sb.0, sb.1),
            ));
        }
        Ok(sa)
    }

    /// Learnable leaf identified by `key` in the resulting [`GradMap`].
    pub fn param(&mut self, key: usize, value: &[f64], rows: usize, cols: usize) -> Result<Var> {
        if value.len() != rows * cols {
            return Err(Error::shape("param", rows * cols, value.len()));
        }
        Ok(self.push(value.to_vec(), rows, cols, Op::Leaf { param: Some(key) }))
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        let n = value.len();
        self.push(value, n, 1, Op::Leaf { param: None })
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.push(vec![value], 1, 1, Op::Leaf { param: None })
    }

    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var> {
        let n = self.expect_vector(x, "matvec")?;
        let (rows, cols) = self.shape(a);
        if cols != n {
            return Err(Error::shape("matvec", cols, n));
        }
        let value = numkit::matvec_raw(self.value(a), rows, cols, self.value(x));
        Ok(self.push(value, rows, 1, Op::MatVec(a, x)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, "add")?;
        let value = numkit::add(self.value(a), self.value(b));
        Ok(self.push(value, r, c, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, "sub")?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        Ok(self.push(value, r, c, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, "mul")?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        Ok(self.push(value, r, c, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let (r, k) = self.shape(x);
        let value = self.value(x).iter().map(|v| v * c).collect();
        self.push(value, r, k, Op::Scale(x, c))
    }

    /// `x + c` elementwise, with `c` a constant.
    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        let (r, k) = self.shape(x);
        let value = self.value(x).iter().map(|v| v + c).collect();
        self.push(value, r, k, Op::Offset(x))
    }

    /// Scalar node times tensor node.
    pub fn scale_by(&mut self, s: Var, x: Var) -> Result<Var> {
        self.expect_scalar(s, "scale_by")?;
        let c = self.scalar_value(s);
        let (r, k) = self.shape(x);
        let value = self.value(x).iter().map(|v| c * v).collect();
        Ok(self.push(value, r, k, Op::ScaleBy(s, x)))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "dot")?;
        let value = numkit::dot(self.value(a), self.value(b));
        Ok(self.push(vec![value], 1, 1, Op::Dot(a, b)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = self.value(x).iter().sum();
        self.push(vec![value], 1, 1, Op::Sum(x))
    }

    pub fn index(&mut self, x: Var, i: usize) -> Result<Var> {
        let n = self.len_of(x);
        if i >= n {
            return Err(Error::shape("index", format!("< {n}"), i));
        }
        let value = self.value(x)[i];
        Ok(self.push(vec![value], 1, 1, Op::Index(x, i)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let (r, k) = self.shape(x);
        let value = numkit::relu(self.value(x));
        self.push(value, r, k, Op::Relu(x))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let n = self.expect_vector(x, "softmax")?;
        let value = numkit::softmax(self.value(x))?;
        Ok(self.push(value, n, 1, Op::Softmax(x)))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let n = self.expect_vector(x, "layer_norm")?;
        if n == 0 {
            return Err(Error::domain("layer norm of an empty vector"));
        }
        if self.len_of(gain) != n || self.len_of(bias) != n {
            return Err(Error::shape("layer_norm", n, self.len_of(gain).max(self.len_of(bias))));
        }
        if eps <= 0.0 {
            return Err(Error::domain("layer norm epsilon must be positive"));
        }
        let LayerNormParts {
            out,
            normalized,
            inv_std,
        } = numkit::layer_norm_parts(self.value(x), self.value(gain), self.value(bias), eps);
        Ok(self.push(
            out,
            n,
            1,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
        ))
    }

    /// `sum_i weights[i] * items[i]`, with `weights` a vector node.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        if self.len_of(weights) != items.len() || items.is_empty() {
            return Err(Error::shape("weighted_sum", self.len_of(weights), items.len()));
        }
        let (r, k) = self.shape(items[0]);
        for &it in &items[1..] {
            self.same_shape(items[0], it, "weighted_sum")?;
        }
        let mut value = vec![0.0; r * k];
        for (w, it) in self.value(weights).iter().zip(items) {
            for (acc, v) in value.iter_mut().zip(&self.nodes[it.0].value) {
                *acc += w * v;
            }
        }
        Ok(self.push(
            value,
            r,
            k,
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
        ))
    }

    /// Stack equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, items: &[Var]) -> Result<Var> {
        if items.is_empty() {
            return Err(Error::domain("stack of zero rows"));
        }
        let n = self.expect_vector(items[0], "stack_rows")?;
        let mut value = Vec::with_capacity(n * items.len());
        for &it in items {
            if self.expect_vector(it, "stack_rows")? != n {
                return Err(Error::shape("stack_rows", n, self.len_of(it)));
            }
            value.extend_from_slice(self.value(it));
        }
        Ok(self.push(value, items.len(), n, Op::StackRows(items.to_vec())))
    }

    pub fn squared_norm(&mut self, x: Var) -> Var {
        let value = self.value(x).iter().map(|v| v * v).sum();
        self.push(vec![value], 1, 1, Op::SquaredNorm(x))
    }

    /// Passes the value through; contributes nothing to ancestors' gradients.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let (r, k) = self.shape(x);
        let value = self.value(x).to_vec();
        self.push(value, r, k, Op::StopGradient)
    }

    /// `ln N(x; mean, var I)` with a constant variance.
    pub fn log_gaussian(&mut self, x: Var, mean: Var, var: f64) -> Result<Var> {
        if !(var > 0.0) {
            return Err(Error::domain(format!("variance must be > 0, got {var}")));
        }
        let resid = self.sub(x, mean)?;
        let sq = self.squared_norm(resid);
        let scaled = self.scale(sq, -0.5 / var);
        let norm = numkit::log_gaussian_norm(self.len_of(x), var);
        Ok(self.offset(scaled, norm))
    }

    /// Reverse sweep from a scalar `root` seeded with `seed`.
    pub fn backward(&self, root: Var, seed: f64) -> Result<Gradients> {
        if self.len_of(root) != 1 {
            return Err(Error::domain(format!(
                "backward needs a scalar root, got {} entries",
                self.len_of(root)
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![seed]);

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf { .. } | Op::StopGradient => {}
                Op::MatVec(a, x) => {
                    let (rows, cols) = self.shape(*a);
                    let av = self.value(*a);
                    let xv = self.value(*x);
                    let ga = accum(&mut adj, *a, rows * cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            ga[r * cols + c] += g[r] * xv[c];
                        }
                    }
                    let gx = accum(&mut adj, *x, cols);
                    for r in 0..rows {
                        let row = &av[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            gx[c] += g[r] * row[c];
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_into(accum(&mut adj, *a, g.len()), &g, 1.0);
                    add_into(accum(&mut adj, *b, g.len()), &g, 1.0);
                }
                Op::Sub(a, b) => {
                    add_into(accum(&mut adj, *a, g.len()), &g, 1.0);
                    add_into(accum(&mut adj, *b, g.len()), &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = accum(&mut adj, *a, g.len());
                    for k in 0..g.len() {
                        ga[k] += g[k] * bv[k];
                    }
                    let gb = accum(&mut adj, *b, g.len());
                    for k in 0..g.len() {
                        gb[k] += g[k] * av[k];
                    }
                }
                Op::Scale(x, c) => add_into(accum(&mut adj, *x, g.len()), &g, *c),
                Op::Offset(x) => add_into(accum(&mut adj, *x, g.len()), &g, 1.0),
                Op::ScaleBy(s, x) => {
                    let xv = self.value(*x);
                    let c = self.scalar_value(*s);
                    accum(&mut adj, *s, 1)[0] += numkit::dot(&g, xv);
                    add_into(accum(&mut adj, *x, g.len()), &g, c);
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    add_into(accum(&mut adj, *a, bv.len()), bv, g[0]);
                    add_into(accum(&mut adj, *b, av.len()), av, g[0]);
                }
                Op::Sum(x) => {
                    for v in accum(&mut adj, *x, self.len_of(*x)).iter_mut() {
                        *v += g[0];
                    }
                }
                Op::Index(x, k) => accum(&mut adj, *x, self.len_of(*x))[*k] += g[0],
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let gx = accum(&mut adj, *x, g.len());
                    for k in 0..g.len() {
                        if xv[k] > 0.0 {
                            gx[k] += g[k];
                        }
                    }
                }
                Op::Softmax(x) => {
                    let p = &node.value;
                    let inner = numkit::dot(&g, p);
                    let gx = accum(&mut adj, *x, p.len());
                    for k in 0..p.len() {
                        gx[k] += p[k] * (g[k] - inner);
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normalized,
                    inv_std,
                } => {
                    let n = normalized.len();
                    let gv = self.value(*gain).to_vec();
                    let gg = accum(&mut adj, *gain, n);
                    for k in 0..n {
                        gg[k] += g[k] * normalized[k];
                    }
                    add_into(accum(&mut adj, *bias, n), &g, 1.0);
                    let dxhat: Vec<f64> = (0..n).map(|k| g[k] * gv[k]).collect();
                    let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                    let mean_dx = numkit::dot(&dxhat, normalized) / n as f64;
                    let gx = accum(&mut adj, *x, n);
                    for k in 0..n {
                        gx[k] += inv_std * (dxhat[k] - mean_d - normalized[k] * mean_dx);
                    }
                }
                Op::WeightedSum { weights, items } => {
                    let wv = self.value(*weights).to_vec();
                    let dw: Vec<f64> = items.iter().map(|it| numkit::dot(&g, self.value(*it))).collect();
                    add_into(accum(&mut adj, *weights, wv.len()), &dw, 1.0);
                    for (w, it) in wv.iter().zip(items) {
                        add_into(accum(&mut adj, *it, g.len()), &g, *w);
                    }
                }
                Op::StackRows(items) => {
                    let n = g.len() / items.len();
                    for (row, it) in items.iter().enumerate() {
                        add_into(accum(&mut adj, *it, n), &g[row * n..(row + 1) * n], 1.0);
                    }
                }
                Op::SquaredNorm(x) => {
                    let xv = self.value(*x);
                    add_into(accum(&mut adj, *x, xv.len()), xv, 2.0 * g[0]);
                }
            }
            adj[i] = Some(g);
        }

        let mut params = GradMap::default();
        for (i, node) in self.nodes.iter().enumerate().take(root.0 + 1) {
            if let Op::Leaf { param: Some(key) } = node.op {
                let g = adj[i].clone().unwrap_or_else(|| vec![0.0; node.value.len()]);
                params.accumulate(key, &g);
            }
        }
        // Leaves recorded after the root cannot influence it.
        for node in &self.nodes[root.0 + 1..] {
            if let Op::Leaf { param: Some(key) } = node.op {
                params.accumulate(key, &vec![0.0; node.value.len()]);
            }
        }
        Ok(Gradients { adjoints: adj, params })
    }
}

fn accum(adj: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut Vec<f64> {
    adj[v.0].get_or_insert_with(|| vec![0.0; n])
}

fn add_into(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

/// Result of a reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Vec<f64>>>,
    params: GradMap,
}

impl Gradients {
    /// Adjoint of any node recorded before the root; `None` if it did not
    /// influence the root.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.adjoints.get(v.0).and_then(|a| a.as_deref())
    }

    pub fn param_grads(&self) -> &GradMap {
        &self.params
    }

    pub fn into_param_grads(self) -> GradMap {
        self.params
    }
}

/// Parameter key to gradient, one entry per learnable leaf key.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradMap {
    grads: BTreeMap<usize, Vec<f64>>,
}

impl GradMap {
    pub fn get(&self, key: usize) -> Option<&[f64]> {
        self.grads.get(&key).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = usize> + '_ {
        self.grads.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.grads.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn accumulate(&mut self, key: usize, g: &[f64]) {
        match self.grads.get_mut(&key) {
            Some(acc) => add_into(acc, g, 1.0),
            None => {
                self.grads.insert(key, g.to_vec());
            }
        }
    }

    /// Entrywise sum with another map.
    pub fn merge(&mut self, other: &GradMap) {
        for (k, g) in other.iter() {
            self.accumulate(k, g);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.grads.values_mut() {
            g.iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.values().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests;
