//! Reverse-mode tape over 2-d matrices.
//!
//! Every op appends a node holding its value and whatever it needs for the
//! backward pass. Token sequences are stored as `[batch * len, width]`
//! matrices, so a reshape to `[batch, len * width]` is free.

use std::collections::HashMap;
use std::f64::consts::PI;

use ndarray::{s, Array2, Axis};

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

pub type Mat = Array2<f64>;

pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Probability clamp used by the binary cross-entropy loss.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Mat, inv_std: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, heads: usize, q_len: usize, kv_len: usize, probs: Vec<f64> },
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Reshape(Var),
    Gather { x: Var, rows: Vec<usize> },
    FreqEncode { x: Var, freqs: usize },
    Mse { pred: Var, target: Mat },
    Bce { logits: Var, labels: Vec<f64> },
    Sum(Var),
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn ensure_finite(m: &Mat, op: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteValue(op.to_string()))
    }
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

/// Frequency encoding of a single scalar: `[sin(2^0 πx), cos(2^0 πx), ...]`,
/// or `[x]` when `freqs == 0`.
pub fn freq_encode_scalar(x: f64, freqs: usize, out: &mut Vec<f64>) {
    if freqs == 0 {
        out.push(x);
        return;
    }
    for j in 0..freqs {
        let w = (1u64 << j) as f64 * PI;
        out.push((w * x).sin());
        out.push((w * x).cos());
    }
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

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Mat, op: Op, name: &str) -> Result<Var> {
        ensure_finite(&value, name)?;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Input that gradients can be requested for.
    pub fn leaf(&mut self, value: Mat) -> Result<Var> {
        self.push(value, Op::Leaf, "leaf")
    }

    /// Parameter value; repeated requests for the same id share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.params.get(&id) {
            return Ok(v);
        }
        let v = self.push(store.value(id).clone(), Op::Param, "param")?;
        self.params.insert(id, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((n, k), (k2, m)) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{n},{k}] x [{k2},{m}]")));
        }
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b), "matmul")
    }

    /// `a + bias` with `bias` of shape `[1, m]` broadcast over rows.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let ((_, m), (br, bm)) = (self.shape(a), self.shape(bias));
        if br != 1 || bm != m {
            return Err(Error::shape("add_bias", format!("bias [{br},{bm}] for width {m}")));
        }
        let value = self.value(a) + self.value(bias);
        self.push(value, Op::AddBias(a, bias), "add_bias")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", format!("{:?} + {:?}", self.shape(a), self.shape(b))));
        }
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b), "add")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.value(a) * c;
        self.push(value, Op::Scale(a, c), "scale")
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).mapv(gelu);
        self.push(value, Op::Gelu(a), "gelu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).mapv(sigmoid);
        self.push(value, Op::Sigmoid(a), "sigmoid")
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).mapv(log_sigmoid);
        self.push(value, Op::LogSigmoid(a), "log_sigmoid")
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let mx = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - mx).exp());
            let z = row.sum();
            row.mapv_inplace(|x| x / z);
        }
        self.push(value, Op::Softmax(a), "softmax")
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (n, m) = self.shape(x);
        if self.shape(gamma) != (1, m) || self.shape(beta) != (1, m) {
            return Err(Error::shape("layer_norm", format!("affine params for width {m}")));
        }
        let xv = self.value(x);
        let mut xhat = Mat::zeros((n, m));
        let mut inv_std = Vec::with_capacity(n);
        for (i, row) in xv.rows().into_iter().enumerate() {
            let mean = row.sum() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for (j, v) in row.iter().enumerate() {
                xhat[(i, j)] = (v - mean) * is;
            }
        }
        let value = &xhat * self.value(gamma) + self.value(beta);
        self.push(value, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, "layer_norm")
    }

    /// Scaled dot-product attention with `heads` heads. `q` holds
    /// `batch * q_len` rows and `k`, `v` hold `batch * kv_len` rows.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, q_len: usize, kv_len: usize) -> Result<Var> {
        let (qr, d) = self.shape(q);
        let (kr, kd) = self.shape(k);
        if self.shape(v) != (kr, kd) || kd != d {
            return Err(Error::shape("attention", "key/value/query widths differ"));
        }
        if heads == 0 || d % heads != 0 || q_len == 0 || kv_len == 0 || qr % q_len != 0 || kr % kv_len != 0 {
            return Err(Error::shape("attention", format!("width {d}, heads {heads}, lens {q_len}/{kv_len}")));
        }
        let batch = qr / q_len;
        if kr / kv_len != batch {
            return Err(Error::shape("attention", format!("query batch {batch} vs key batch {}", kr / kv_len)));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let qs = self.value(q).as_slice().expect("standard layout");
        let ks = self.value(k).as_slice().expect("standard layout");
        let vs = self.value(v).as_slice().expect("standard layout");
        let mut out = vec![0.0; qr * d];
        let mut probs = vec![0.0; batch * heads * q_len * kv_len];
        let mut scores = vec![0.0; kv_len];
        for b in 0..batch {
            for h in 0..heads {
                let c0 = h * dh;
                for i in 0..q_len {
                    let qi = &qs[(b * q_len + i) * d + c0..][..dh];
                    let mut mx = f64::NEG_INFINITY;
                    for (j, sc) in scores.iter_mut().enumerate() {
                        let kj = &ks[(b * kv_len + j) * d + c0..][..dh];
                        *sc = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                        mx = mx.max(*sc);
                    }
                    let mut z = 0.0;
                    for sc in scores.iter_mut() {
                        *sc = (*sc - mx).exp();
                        z += *sc;
                    }
                    let pbase = ((b * heads + h) * q_len + i) * kv_len;
                    let orow = &mut out[(b * q_len + i) * d + c0..][..dh];
                    for (j, sc) in scores.iter().enumerate() {
                        let p = sc / z;
                        probs[pbase + j] = p;
                        let vj = &vs[(b * kv_len + j) * d + c0..][..dh];
                        for (o, vv) in orow.iter_mut().zip(vj) {
                            *o += p * vv;
                        }
                    }
                }
            }
        }
        let value = Mat::from_shape_vec((qr, d), out).expect("shape");
        self.push(value, Op::Attention { q, k, v, heads, q_len, kv_len, probs }, "attention")
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat", "no inputs"));
        };
        let rows = self.shape(first).0;
        if parts.iter().any(|&p| self.shape(p).0 != rows) {
            return Err(Error::shape("concat", "row counts differ"));
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).map_err(|e| Error::shape("concat", e.to_string()))?;
        self.push(value, Op::Concat(parts.to_vec()), "concat")
    }

    /// Columns `start .. start + len`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (_, m) = self.shape(x);
        if start + len > m || len == 0 {
            return Err(Error::shape("slice_cols", format!("{start}..{} of {m}", start + len)));
        }
        let value = self.value(x).slice(s![.., start..start + len]).to_owned();
        self.push(value, Op::Slice { x, start }, "slice_cols")
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let (n, m) = self.shape(x);
        if n * m != rows * cols {
            return Err(Error::shape("reshape", format!("[{n},{m}] -> [{rows},{cols}]")));
        }
        let data = self.value(x).iter().copied().collect();
        let value = Mat::from_shape_vec((rows, cols), data).expect("shape");
        self.push(value, Op::Reshape(x), "reshape")
    }

    /// Row `i` of the output is row `rows[i]` of `x`.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (n, _) = self.shape(x);
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {n}")));
        }
        let value = self.value(x).select(Axis(0), rows);
        self.push(value, Op::Gather { x, rows: rows.to_vec() }, "gather_rows")
    }

    /// Per-scalar frequency encoding; each column expands to `2 * freqs`
    /// columns, or passes through unchanged when `freqs == 0`.
    pub fn freq_encode(&mut self, x: Var, freqs: usize) -> Result<Var> {
        let (n, m) = self.shape(x);
        let width = if freqs == 0 { 1 } else { 2 * freqs };
        let mut data = Vec::with_capacity(n * m * width);
        for &v in self.value(x).iter() {
            freq_encode_scalar(v, freqs, &mut data);
        }
        let value = Mat::from_shape_vec((n, m * width), data).expect("shape");
        self.push(value, Op::FreqEncode { x, freqs }, "freq_encode")
    }

    /// Mean of squared differences over all elements, as a `[1, 1]` scalar.
    pub fn mse(&mut self, pred: Var, target: Mat) -> Result<Var> {
        if self.shape(pred) != target.dim() {
            return Err(Error::shape("mse", format!("{:?} vs {:?}", self.shape(pred), target.dim())));
        }
        let diff = self.value(pred) - &target;
        let value = Mat::from_elem((1, 1), diff.iter().map(|d| d * d).sum::<f64>() / diff.len() as f64);
        self.push(value, Op::Mse { pred, target }, "mse")
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `labels`, with
    /// the probability clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    pub fn bce(&mut self, logits: Var, labels: &[f64]) -> Result<Var> {
        let (n, m) = self.shape(logits);
        if m != 1 || n != labels.len() {
            return Err(Error::shape("bce", format!("logits [{n},{m}] vs {} labels", labels.len())));
        }
        let loss = self
            .value(logits)
            .iter()
            .zip(labels)
            .map(|(&z, &y)| bce_loss(y, sigmoid(z)))
            .sum::<f64>()
            / n as f64;
        self.push(Mat::from_elem((1, 1), loss), Op::Bce { logits, labels: labels.to_vec() }, "bce")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Mat::from_elem((1, 1), self.value(x).sum());
        self.push(value, Op::Sum(x), "sum")
    }

    /// Back-propagates `seed` (shaped like `out`) through the tape.
    pub fn backward(&self, out: Var, seed: Mat) -> Result<Gradients> {
        if seed.dim() != self.shape(out) {
            return Err(Error::shape("backward", format!("seed {:?} for output {:?}", seed.dim(), self.shape(out))));
        }
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            ensure_finite(&g, "backward")?;
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, params: self.params.iter().map(|(&id, &v)| (id, v)).collect() })
    }

    fn backprop_node(&self, idx: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let node = &self.nodes[idx];
        let acc = |grads: &mut [Option<Mat>], v: Var, d: Mat| match &mut grads[v.0] {
            Some(existing) => *existing += &d,
            slot @ None => *slot = Some(d),
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                acc(grads, *a, g.dot(&self.value(*b).t()));
                acc(grads, *b, self.value(*a).t().dot(g));
            }
            Op::AddBias(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Scale(a, c) => acc(grads, *a, g * *c),
            Op::Gelu(a) => {
                let mut d = self.value(*a).mapv(gelu_grad);
                d *= g;
                acc(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = node.value.mapv(|y| y * (1.0 - y)) * g;
                acc(grads, *a, d);
            }
            Op::LogSigmoid(a) => {
                let d = self.value(*a).mapv(|z| 1.0 - sigmoid(z)) * g;
                acc(grads, *a, d);
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let mut d = y * g;
                for (mut row, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                    let dot = row.sum();
                    row.zip_mut_with(&yrow, |r, &yy| *r -= yy * dot);
                }
                acc(grads, *a, d);
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let m = xhat.ncols() as f64;
                acc(grads, *gamma, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                acc(grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                let dxhat = g * self.value(*gamma);
                let mut dx = Mat::zeros(xhat.dim());
                for i in 0..xhat.nrows() {
                    let row = dxhat.row(i);
                    let xh = xhat.row(i);
                    let s1 = row.sum();
                    let s2 = row.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>();
                    for j in 0..xhat.ncols() {
                        dx[(i, j)] = inv_std[i] / m * (m * row[j] - s1 - xh[j] * s2);
                    }
                }
                acc(grads, *x, dx);
            }
            Op::Attention { q, k, v, heads, q_len, kv_len, probs } => {
                let (dq, dk, dv) = self.attention_backward(*q, *k, *v, *heads, *q_len, *kv_len, probs, g);
                acc(grads, *q, dq);
                acc(grads, *k, dk);
                acc(grads, *v, dv);
            }
            Op::Concat(parts) => {
                let mut col = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    acc(grads, p, g.slice(s![.., col..col + w]).to_owned());
                    col += w;
                }
            }
            Op::Slice { x, start } => {
                let mut d = Mat::zeros(self.shape(*x));
                let w = g.ncols();
                d.slice_mut(s![.., *start..*start + w]).assign(g);
                acc(grads, *x, d);
            }
            Op::Reshape(x) => {
                let d = Mat::from_shape_vec(self.shape(*x), g.iter().copied().collect()).expect("shape");
                acc(grads, *x, d);
            }
            Op::Gather { x, rows } => {
                let mut d = Mat::zeros(self.shape(*x));
                for (i, &r) in rows.iter().enumerate() {
                    let mut dst = d.row_mut(r);
                    dst += &g.row(i);
                }
                acc(grads, *x, d);
            }
            Op::FreqEncode { x, freqs } => {
                let xv = self.value(*x);
                let d = if *freqs == 0 {
                    g.clone()
                } else {
                    let width = 2 * freqs;
                    let gs = g.as_slice().expect("standard layout");
                    let data = xv
                        .iter()
                        .enumerate()
                        .map(|(e, &v)| {
                            let gb = &gs[e * width..][..width];
                            (0..*freqs)
                                .map(|j| {
                                    let w = (1u64 << j) as f64 * PI;
                                    w * (gb[2 * j] * (w * v).cos() - gb[2 * j + 1] * (w * v).sin())
                                })
                                .sum::<f64>()
                        })
                        .collect();
                    Mat::from_shape_vec(xv.dim(), data).expect("shape")
                };
                acc(grads, *x, d);
            }
            Op::Mse { pred, target } => {
                let n = target.len() as f64;
                let d = (self.value(*pred) - target) * (2.0 * g[(0, 0)] / n);
                acc(grads, *pred, d);
            }
            Op::Bce { logits, labels } => {
                let n = labels.len() as f64;
                let scale = g[(0, 0)] / n;
                let z = self.value(*logits);
                let data = z
                    .iter()
                    .zip(labels)
                    .map(|(&z, &y)| {
                        let p = sigmoid(z);
                        if p > PROB_CLAMP && p < 1.0 - PROB_CLAMP {
                            (p - y) * scale
                        } else {
                            0.0
                        }
                    })
                    .collect();
                acc(grads, *logits, Mat::from_shape_vec(z.dim(), data).expect("shape"));
            }
            Op::Sum(x) => acc(grads, *x, Mat::from_elem(self.shape(*x), g[(0, 0)])),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        q_len: usize,
        kv_len: usize,
        probs: &[f64],
        g: &Mat,
    ) -> (Mat, Mat, Mat) {
        let (qr, d) = self.shape(q);
        let kr = self.shape(k).0;
        let batch = qr / q_len;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let qs = self.value(q).as_slice().expect("standard layout");
        let ks = self.value(k).as_slice().expect("standard layout");
        let vs = self.value(v).as_slice().expect("standard layout");
        let gs = g.as_slice().expect("standard layout");
        let mut dq = vec![0.0; qr * d];
        let mut dk = vec![0.0; kr * d];
        let mut dv = vec![0.0; kr * d];
        let mut dp = vec![0.0; kv_len];
        for b in 0..batch {
            for h in 0..heads {
                let c0 = h * dh;
                for i in 0..q_len {
                    let qrow = (b * q_len + i) * d + c0;
                    let go = &gs[qrow..][..dh];
                    let pbase = ((b * heads + h) * q_len + i) * kv_len;
                    let p = &probs[pbase..][..kv_len];
                    let mut dot = 0.0;
                    for j in 0..kv_len {
                        let krow = (b * kv_len + j) * d + c0;
                        let vj = &vs[krow..][..dh];
                        dp[j] = go.iter().zip(vj).map(|(a, b)| a * b).sum();
                        dot += p[j] * dp[j];
                        for c in 0..dh {
                            dv[krow + c] += p[j] * go[c];
                        }
                    }
                    for j in 0..kv_len {
                        let ds = p[j] * (dp[j] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let krow = (b * kv_len + j) * d + c0;
                        for c in 0..dh {
                            dq[qrow + c] += ds * ks[krow + c];
                            dk[krow + c] += ds * qs[qrow + c];
                        }
                    }
                }
            }
        }
        (
            Mat::from_shape_vec((qr, d), dq).expect("shape"),
            Mat::from_shape_vec((kr, d), dk).expect("shape"),
            Mat::from_shape_vec((kr, d), dv).expect("shape"),
        )
    }
}

/// Binary cross-entropy `-[y log p + (1 - y) log(1 - p)]` with `p` clamped to
/// `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub fn bce_loss(y: f64, p: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

pub struct Gradients {
    grads: Vec<Option<Mat>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when `v` does not influence the output.
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, zero-filled when `v` does not influence the output.
    pub fn wrt_or_zero(&self, tape: &Tape, v: Var) -> Mat {
        self.wrt(v).cloned().unwrap_or_else(|| Mat::zeros(tape.shape(v)))
    }

    /// Per-parameter gradients indexed like `store`; unused parameters are
    /// zero.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Mat> {
        let mut out: Vec<Mat> = store.ids().map(|id| Mat::zeros(store.value(id).dim())).collect();
        for &(id, v) in &self.params {
            if let Some(g) = self.wrt(v) {
                out[id.index()] += g;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_key_attention_returns_the_value() {
        let mut t = Tape::new();
        let q = t.leaf(array![[0.3, -1.2, 0.5, 2.0]]).unwrap();
        let k = t.leaf(array![[1.0, 4.0, -2.0, 0.1]]).unwrap();
        let vv = array![[7.0, -3.0, 0.25, 1.5]];
        let v = t.leaf(vv.clone()).unwrap();
        let out = t.attention(q, k, v, 2, 1, 1).unwrap();
        assert_eq!(t.value(out), &vv);
    }

    #[test]
    fn linear_map_input_gradient_is_transpose() {
        let mut t = Tape::new();
        let x = t.leaf(array![[1.0, 2.0, 3.0]]).unwrap();
        let w = array![[1.0, 0.5], [-2.0, 0.0], [0.25, 3.0]];
        let wv = t.leaf(w.clone()).unwrap();
        let y = t.matmul(x, wv).unwrap();
        let dy = array![[0.7, -1.1]];
        let grads = t.backward(y, dy.clone()).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &dy.dot(&w.t()));
    }

    #[test]
    fn constant_branch_has_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(array![[1.0, 2.0]]).unwrap();
        let c = t.leaf(array![[5.0, 6.0]]).unwrap();
        let y = t.sum(x).unwrap();
        let g = t.backward(y, array![[1.0]]).unwrap();
        assert!(g.wrt(c).is_none());
        assert_eq!(g.wrt_or_zero(&t, c), array![[0.0, 0.0]]);
    }

    #[test]
    fn shape_errors() {
        let mut t = Tape::new();
        let a = t.leaf(Mat::zeros((2, 3))).unwrap();
        let b = t.leaf(Mat::zeros((2, 3))).unwrap();
        assert!(matches!(t.matmul(a, b), Err(Error::ShapeMismatch { .. })));
        assert!(t.slice_cols(a, 2, 2).is_err());
        assert!(t.reshape(a, 4, 2).is_err());
        assert!(t.gather_rows(a, &[2]).is_err());
        assert!(t.attention(a, b, b, 2, 1, 1).is_err());
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut t = Tape::new();
        assert!(matches!(t.leaf(array![[f64::NAN]]), Err(Error::NonFiniteValue(_))));
        let a = t.leaf(array![[1e308]]).unwrap();
        assert!(matches!(t.scale(a, 10.0), Err(Error::NonFiniteValue(_))));
    }

    #[test]
    fn bce_examples() {
        assert!((bce_loss(1.0, 0.5) - 0.693147).abs() < 1e-6);
        assert!((bce_loss(0.0, 0.5) - 0.693147).abs() < 1e-6);
        assert!(bce_loss(1.0, 1.0) < 1.1e-7);
        assert!(bce_loss(1.0, 0.0).is_finite());
        let mut prev = f64::INFINITY;
        for i in 1..100 {
            let l = bce_loss(1.0, i as f64 / 100.0);
            assert!(l >= 0.0 && l < prev);
            prev = l;
        }
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert!((log_sigmoid(0.0) - 0.5f64.ln()).abs() < 1e-15);
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-9);
        assert!(log_sigmoid(800.0).abs() < 1e-300);
    }
}
