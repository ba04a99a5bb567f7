//! A small reverse-mode automatic differentiation tape over `f64` vectors.
//!
//! Parameters live in a [`ParamSet`] as row-major matrices. A [`Graph`] borrows
//! the parameters, records every operation with its forward value and, on
//! [`Graph::backward`], accumulates parameter gradients into [`Gradients`].
//! All intermediate values are vectors; scalars are vectors of length one.

mod layers;
mod optim;

pub use layers::{BiLstm, BiLstmOutput, Dropout, Lstm, OutputDistribution, PointerDecoder, PointerStep};
pub use optim::Adam;

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Row-major matrix; column vectors have `cols == 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
        Self { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ParamError {
    #[error("missing parameter {0:?}")]
    Missing(String),
    #[error("parameter {name:?} has shape {got:?}, expected {expected:?}")]
    Shape {
        name: String,
        got: (usize, usize),
        expected: (usize, usize),
    },
}

/// Named parameter tensors in registration order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, t: Tensor) -> ParamId {
        assert!(self.id(name).is_none(), "duplicate parameter {name}");
        self.names.push(name.to_string());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    /// Uniform init in `+-sqrt(6 / (rows + cols))`.
    pub fn add_xavier<R: Rng + ?Sized>(&mut self, name: &str, rows: usize, cols: usize, rng: &mut R) -> ParamId {
        let scale = libm::sqrt(6.0 / (rows + cols) as f64);
        self.add(name, Tensor::uniform(rows, cols, scale, rng))
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.add(name, Tensor::zeros(rows, cols))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Looks a parameter up by name and checks its shape.
    pub fn expect(&self, name: &str, rows: usize, cols: usize) -> Result<ParamId, ParamError> {
        let id = self.id(name).ok_or_else(|| ParamError::Missing(name.to_string()))?;
        let t = &self.tensors[id.0];
        if (t.rows, t.cols) != (rows, cols) {
            return Err(ParamError::Shape {
                name: name.to_string(),
                got: (t.rows, t.cols),
                expected: (rows, cols),
            });
        }
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> + '_ {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }
}

/// Dense gradient buffers shaped like a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    data: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Self {
            data: params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id.0]
    }

    pub fn zero(&mut self) {
        self.data.iter_mut().for_each(|g| g.iter_mut().for_each(|x| *x = 0.0));
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|g| g.iter_mut().for_each(|x| *x *= s));
    }

    pub fn global_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().flatten().map(|x| x * x).sum())
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub(crate) fn buffers(&self) -> &[Vec<f64>] {
        &self.data
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    Embed(ParamId, usize),
    Affine(ParamId, ParamId, Var),
    Linear(ParamId, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Dot(Var, Var),
    Stack(Vec<Var>),
    Softmax(Var),
    Pick(Var, usize),
    SumAt(Var, Vec<usize>),
    WeightedSum(Var, Vec<Var>),
    Mean(Vec<Var>),
    Sum(Vec<Var>),
    Mask(Var, Vec<f64>),
    BceLogits(Var, Vec<f64>),
    /// Input: gate pre-activations `[i f g o]` (4H) and previous cell (H).
    /// Output: `[h; c]` (2H).
    Lstm(Var, Var),
}

const LOG_FLOOR: f64 = 1e-300;

/// Records operations for one forward pass.
pub struct Graph<'p> {
    params: &'p ParamSet,
    values: Vec<Vec<f64>>,
    ops: Vec<Op>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

fn grad_slot(grads: &mut [Vec<f64>], v: Var, len: usize) -> &mut Vec<f64> {
    let g = &mut grads[v.0];
    if g.is_empty() {
        g.resize(len, 0.0);
    }
    g
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            values: Vec::with_capacity(256),
            ops: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.values[v.0]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.values[v.0][0]
    }

    pub fn len(&self, v: Var) -> usize {
        self.values[v.0].len()
    }

    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Input)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.input(vec![0.0; n])
    }

    /// The whole parameter flattened into a vector (used for biases).
    pub fn param(&mut self, p: ParamId) -> Var {
        let v = self.params.get(p).data.clone();
        self.push(v, Op::Param(p))
    }

    pub fn embed(&mut self, table: ParamId, row: usize) -> Var {
        let v = self.params.get(table).row(row).to_vec();
        self.push(v, Op::Embed(table, row))
    }

    fn matvec(w: &Tensor, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(w.cols, x.len());
        for (i, o) in out.iter_mut().enumerate() {
            let row = &w.data[i * w.cols..(i + 1) * w.cols];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            *o += acc;
        }
    }

    pub fn linear(&mut self, w: ParamId, x: Var) -> Var {
        let wt = self.params.get(w);
        assert_eq!(wt.cols, self.values[x.0].len(), "linear: shape mismatch for {}", self.params.name(w));
        let mut out = vec![0.0; wt.rows];
        Self::matvec(wt, &self.values[x.0], &mut out);
        self.push(out, Op::Linear(w, x))
    }

    /// `W x + b`.
    pub fn affine(&mut self, w: ParamId, b: ParamId, x: Var) -> Var {
        let wt = self.params.get(w);
        assert_eq!(wt.cols, self.values[x.0].len(), "affine: shape mismatch for {}", self.params.name(w));
        let mut out = self.params.get(b).data.clone();
        assert_eq!(out.len(), wt.rows);
        Self::matvec(wt, &self.values[x.0], &mut out);
        self.push(out, Op::Affine(w, b, x))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (x, y) = (&self.values[a.0], &self.values[b.0]);
        assert_eq!(x.len(), y.len(), "elementwise: length mismatch");
        let v = x.iter().zip(y).map(|(p, q)| f(*p, *q)).collect();
        self.push(v, op)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.values[a.0].iter().map(|x| f(*x)).collect();
        self.push(v, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        self.map(a, |x| 1.0 - x, Op::OneMinus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, libm::tanh, Op::Tanh(a))
    }

    /// Natural log, with inputs floored at a tiny positive constant.
    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, |x| libm::log(x.max(LOG_FLOOR)), Op::Log(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut v = Vec::with_capacity(parts.iter().map(|p| self.values[p.0].len()).sum());
        for p in parts {
            v.extend_from_slice(&self.values[p.0]);
        }
        self.push(v, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.values[a.0][start..start + len].to_vec();
        self.push(v, Op::Slice(a, start))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (&self.values[a.0], &self.values[b.0]);
        assert_eq!(x.len(), y.len(), "dot: length mismatch");
        let s = x.iter().zip(y).map(|(p, q)| p * q).sum();
        self.push(vec![s], Op::Dot(a, b))
    }

    /// Stacks scalars into a vector.
    pub fn stack(&mut self, xs: &[Var]) -> Var {
        let v = xs.iter().map(|x| self.values[x.0][0]).collect();
        self.push(v, Op::Stack(xs.to_vec()))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let x = &self.values[a.0];
        let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut v: Vec<f64> = x.iter().map(|z| libm::exp(z - m)).collect();
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|z| *z /= s);
        self.push(v, Op::Softmax(a))
    }

    pub fn pick(&mut self, a: Var, i: usize) -> Var {
        let v = self.values[a.0][i];
        self.push(vec![v], Op::Pick(a, i))
    }

    /// Sum of the entries at `idx` (repeats count repeatedly).
    pub fn sum_at(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let s = idx.iter().map(|&i| self.values[a.0][i]).sum();
        self.push(vec![s], Op::SumAt(a, idx))
    }

    /// `sum_j w[j] * vs[j]`.
    pub fn weighted_sum(&mut self, w: Var, vs: &[Var]) -> Var {
        assert_eq!(self.values[w.0].len(), vs.len());
        let n = self.values[vs[0].0].len();
        let mut out = vec![0.0; n];
        for (j, v) in vs.iter().enumerate() {
            let wj = self.values[w.0][j];
            for (o, x) in out.iter_mut().zip(&self.values[v.0]) {
                *o += wj * x;
            }
        }
        self.push(out, Op::WeightedSum(w, vs.to_vec()))
    }

    pub fn mean(&mut self, vs: &[Var]) -> Var {
        let n = self.values[vs[0].0].len();
        let mut out = vec![0.0; n];
        for v in vs {
            for (o, x) in out.iter_mut().zip(&self.values[v.0]) {
                *o += x;
            }
        }
        let k = vs.len() as f64;
        out.iter_mut().for_each(|o| *o /= k);
        self.push(out, Op::Mean(vs.to_vec()))
    }

    pub fn sum(&mut self, vs: &[Var]) -> Var {
        let n = self.values[vs[0].0].len();
        let mut out = vec![0.0; n];
        for v in vs {
            for (o, x) in out.iter_mut().zip(&self.values[v.0]) {
                *o += x;
            }
        }
        self.push(out, Op::Sum(vs.to_vec()))
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mask(&mut self, a: Var, mask: Vec<f64>) -> Var {
        let v = self.values[a.0].iter().zip(&mask).map(|(x, m)| x * m).collect();
        self.push(v, Op::Mask(a, mask))
    }

    /// Summed binary cross-entropy between `sigmoid(logits)` and `targets`.
    pub fn bce_logits(&mut self, logits: Var, targets: Vec<f64>) -> Var {
        let z = &self.values[logits.0];
        assert_eq!(z.len(), targets.len());
        let s = z.iter().zip(&targets).map(|(z, y)| softplus(*z) - y * z).sum();
        self.push(vec![s], Op::BceLogits(logits, targets))
    }

    /// One LSTM update from gate pre-activations; returns `[h; c]`.
    pub fn lstm(&mut self, gates: Var, c_prev: Var) -> Var {
        let z = &self.values[gates.0];
        let c0 = &self.values[c_prev.0];
        let h = c0.len();
        assert_eq!(z.len(), 4 * h, "lstm: gate size mismatch");
        let mut out = vec![0.0; 2 * h];
        for k in 0..h {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[h + k]);
            let g = libm::tanh(z[2 * h + k]);
            let o = sigmoid(z[3 * h + k]);
            let c = f * c0[k] + i * g;
            out[k] = o * libm::tanh(c);
            out[h + k] = c;
        }
        self.push(out, Op::Lstm(gates, c_prev))
    }

    /// Backpropagates from the scalar `loss`, adding parameter gradients into `grads`.
    pub fn backward(&self, loss: Var, grads: &mut Gradients) {
        let mut g: Vec<Vec<f64>> = vec![Vec::new(); self.values.len()];
        g[loss.0] = vec![1.0; self.values[loss.0].len()];
        for i in (0..=loss.0).rev() {
            if g[i].is_empty() {
                continue;
            }
            let gy = core::mem::take(&mut g[i]);
            let y = &self.values[i];
            match &self.ops[i] {
                Op::Input => {}
                Op::Param(p) => {
                    for (d, x) in grads.data[p.0].iter_mut().zip(&gy) {
                        *d += x;
                    }
                }
                Op::Embed(p, row) => {
                    let cols = self.params.get(*p).cols;
                    for (d, x) in grads.data[p.0][row * cols..(row + 1) * cols].iter_mut().zip(&gy) {
                        *d += x;
                    }
                }
                Op::Affine(w, b, x) => {
                    for (d, v) in grads.data[b.0].iter_mut().zip(&gy) {
                        *d += v;
                    }
                    self.back_linear(*w, *x, &gy, &mut g, grads);
                }
                Op::Linear(w, x) => self.back_linear(*w, *x, &gy, &mut g, grads),
                Op::Add(a, b) => {
                    for (d, v) in grad_slot(&mut g, *a, gy.len()).iter_mut().zip(&gy) {
                        *d += v;
                    }
                    for (d, v) in grad_slot(&mut g, *b, gy.len()).iter_mut().zip(&gy) {
                        *d += v;
                    }
                }
                Op::Sub(a, b) => {
                    for (d, v) in grad_slot(&mut g, *a, gy.len()).iter_mut().zip(&gy) {
                        *d += v;
                    }
                    for (d, v) in grad_slot(&mut g, *b, gy.len()).iter_mut().zip(&gy) {
                        *d -= v;
                    }
                }
                Op::Mul(a, b) => {
                    let (xa, xb) = (&self.values[a.0], &self.values[b.0]);
                    let ga: Vec<f64> = gy.iter().zip(xb).map(|(v, x)| v * x).collect();
                    let gb: Vec<f64> = gy.iter().zip(xa).map(|(v, x)| v * x).collect();
                    for (d, v) in grad_slot(&mut g, *a, gy.len()).iter_mut().zip(&ga) {
                        *d += v;
                    }
                    for (d, v) in grad_slot(&mut g, *b, gy.len()).iter_mut().zip(&gb) {
                        *d += v;
                    }
                }
                Op::Scale(a, s) => {
                    for (d, v) in grad_slot(&mut g, *a, gy.len()).iter_mut().zip(&gy) {
                        *d += v * s;
                    }
                }
                Op::OneMinus(a) => {
                    for (d, v) in grad_slot(&mut g, *a, gy.len()).iter_mut().zip(&gy) {
                        *d -= v;
                    }
                }
                Op::Sigmoid(a) => {
                    for ((d, v), s) in grad_slot(&mut g, *a, gy.len()).iter_mut().zip(&gy).zip(y) {
                        *d += v * s * (1.0 - s);
                    }
                }
                Op::Tanh(a) => {
                    for ((d, v), t) in grad_slot(&mut g, *a, gy.len()).iter_mut().zip(&gy).zip(y) {
                        *d += v * (1.0 - t * t);
                    }
                }
                Op::Log(a) => {
                    let x = &self.values[a.0];
                    for ((d, v), xi) in grad_slot(&mut g, *a, gy.len()).iter_mut().zip(&gy).zip(x) {
                        *d += v / xi.max(LOG_FLOOR);
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.values[p.0].len();
                        for (d, v) in grad_slot(&mut g, *p, n).iter_mut().zip(&gy[off..off + n]) {
                            *d += v;
                        }
                        off += n;
                    }
                }
                Op::Slice(a, start) => {
                    let n = self.values[a.0].len();
                    let s = *start;
                    for (d, v) in grad_slot(&mut g, *a, n)[s..s + gy.len()].iter_mut().zip(&gy) {
                        *d += v;
                    }
                }
                Op::Dot(a, b) => {
                    let gs = gy[0];
                    let (xa, xb) = (self.values[a.0].clone(), &self.values[b.0]);
                    let n = xa.len();
                    for (d, x) in grad_slot(&mut g, *a, n).iter_mut().zip(xb) {
                        *d += gs * x;
                    }
                    for (d, x) in grad_slot(&mut g, *b, n).iter_mut().zip(&xa) {
                        *d += gs * x;
                    }
                }
                Op::Stack(xs) => {
                    for (x, v) in xs.iter().zip(&gy) {
                        grad_slot(&mut g, *x, 1)[0] += v;
                    }
                }
                Op::Softmax(a) => {
                    let dotp: f64 = gy.iter().zip(y).map(|(v, p)| v * p).sum();
                    for ((d, v), p) in grad_slot(&mut g, *a, gy.len()).iter_mut().zip(&gy).zip(y) {
                        *d += p * (v - dotp);
                    }
                }
                Op::Pick(a, idx) => {
                    let n = self.values[a.0].len();
                    grad_slot(&mut g, *a, n)[*idx] += gy[0];
                }
                Op::SumAt(a, idx) => {
                    let n = self.values[a.0].len();
                    let slot = grad_slot(&mut g, *a, n);
                    for &i in idx {
                        slot[i] += gy[0];
                    }
                }
                Op::WeightedSum(w, vs) => {
                    let wv = self.values[w.0].clone();
                    let mut gw = vec![0.0; vs.len()];
                    for (j, v) in vs.iter().enumerate() {
                        let x = &self.values[v.0];
                        gw[j] = x.iter().zip(&gy).map(|(a, b)| a * b).sum();
                        for (d, gv) in grad_slot(&mut g, *v, gy.len()).iter_mut().zip(&gy) {
                            *d += wv[j] * gv;
                        }
                    }
                    for (d, v) in grad_slot(&mut g, *w, vs.len()).iter_mut().zip(&gw) {
                        *d += v;
                    }
                }
                Op::Mean(vs) => {
                    let k = 1.0 / vs.len() as f64;
                    for v in vs {
                        for (d, x) in grad_slot(&mut g, *v, gy.len()).iter_mut().zip(&gy) {
                            *d += k * x;
                        }
                    }
                }
                Op::Sum(vs) => {
                    for v in vs {
                        for (d, x) in grad_slot(&mut g, *v, gy.len()).iter_mut().zip(&gy) {
                            *d += x;
                        }
                    }
                }
                Op::Mask(a, m) => {
                    for ((d, v), mi) in grad_slot(&mut g, *a, gy.len()).iter_mut().zip(&gy).zip(m) {
                        *d += v * mi;
                    }
                }
                Op::BceLogits(z, t) => {
                    let zs = self.values[z.0].clone();
                    for ((d, zi), ti) in grad_slot(&mut g, *z, t.len()).iter_mut().zip(&zs).zip(t) {
                        *d += gy[0] * (sigmoid(*zi) - ti);
                    }
                }
                Op::Lstm(gates, c_prev) => {
                    let z = self.values[gates.0].clone();
                    let c0 = self.values[c_prev.0].clone();
                    let h = c0.len();
                    let mut gz = vec![0.0; 4 * h];
                    let mut gc0 = vec![0.0; h];
                    for k in 0..h {
                        let i = sigmoid(z[k]);
                        let f = sigmoid(z[h + k]);
                        let gg = libm::tanh(z[2 * h + k]);
                        let o = sigmoid(z[3 * h + k]);
                        let c = y[h + k];
                        let tc = libm::tanh(c);
                        let dh = gy[k];
                        let dc = gy[h + k] + dh * o * (1.0 - tc * tc);
                        gz[k] = dc * gg * i * (1.0 - i);
                        gz[h + k] = dc * c0[k] * f * (1.0 - f);
                        gz[2 * h + k] = dc * i * (1.0 - gg * gg);
                        gz[3 * h + k] = dh * tc * o * (1.0 - o);
                        gc0[k] = dc * f;
                    }
                    for (d, v) in grad_slot(&mut g, *gates, 4 * h).iter_mut().zip(&gz) {
                        *d += v;
                    }
                    for (d, v) in grad_slot(&mut g, *c_prev, h).iter_mut().zip(&gc0) {
                        *d += v;
                    }
                }
            }
        }
    }

    fn back_linear(&self, w: ParamId, x: Var, gy: &[f64], g: &mut [Vec<f64>], grads: &mut Gradients) {
        let wt = self.params.get(w);
        let xv = &self.values[x.0];
        let gw = &mut grads.data[w.0];
        let gx = grad_slot(g, x, wt.cols);
        for (i, gi) in gy.iter().enumerate() {
            if *gi == 0.0 {
                continue;
            }
            let row = &wt.data[i * wt.cols..(i + 1) * wt.cols];
            let grow = &mut gw[i * wt.cols..(i + 1) * wt.cols];
            for j in 0..wt.cols {
                grow[j] += gi * xv[j];
                gx[j] += gi * row[j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    /// Central finite differences of `f` with respect to every parameter scalar.
    fn check<F: Fn(&mut Graph) -> Var>(params: &mut ParamSet, f: F) -> f64 {
        let mut grads = Gradients::zeros_like(params);
        {
            let mut g = Graph::new(params);
            let loss = f(&mut g);
            g.backward(loss, &mut grads);
        }
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for id in params.ids().collect::<Vec<_>>() {
            for k in 0..params.get(id).data.len() {
                let orig = params.get(id).data[k];
                params.get_mut(id).data[k] = orig + eps;
                let up = {
                    let mut g = Graph::new(params);
                    let l = f(&mut g);
                    g.scalar(l)
                };
                params.get_mut(id).data[k] = orig - eps;
                let down = {
                    let mut g = Graph::new(params);
                    let l = f(&mut g);
                    g.scalar(l)
                };
                params.get_mut(id).data[k] = orig;
                let num = (up - down) / (2.0 * eps);
                let ana = grads.get(id)[k];
                let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-4);
                worst = worst.max(rel);
            }
        }
        worst
    }

    #[test]
    fn elementary_ops_have_correct_gradients() {
        let mut rng = seeded_rng(11);
        let mut p = ParamSet::new();
        let w = p.add_xavier("w", 5, 3, &mut rng);
        let b = p.add("b", Tensor::uniform(5, 1, 0.5, &mut rng));
        let e = p.add("e", Tensor::uniform(4, 3, 0.5, &mut rng));
        let gates = p.add_xavier("gates", 8, 5, &mut rng);
        let err = check(&mut p, |g| {
            let x = g.embed(e, 2);
            let y = g.affine(w, b, x);
            let t = g.tanh(y);
            let s = g.sigmoid(y);
            let m = g.mul(t, s);
            let d = g.sub(m, t);
            let sm = g.softmax(d);
            let c = g.concat(&[sm, t]);
            let sl = g.slice(c, 3, 4);
            let z = g.linear(gates, y);
            let c0 = g.slice(y, 1, 2);
            let z2 = g.slice(z, 0, 8);
            let hc = g.lstm(z2, c0);
            let hc2 = g.slice(hc, 0, 2);
            let dot = g.dot(sl, sl);
            let p1 = g.pick(sm, 1);
            let sa = g.sum_at(sm, alloc::vec![0, 0, 4]);
            let st = g.stack(&[dot, p1, sa]);
            let ws = g.weighted_sum(st, &[t, s, m]);
            let mn = g.mean(&[ws, t]);
            let om = g.one_minus(p1);
            let lg = g.log(om);
            let bce = g.bce_logits(mn, alloc::vec![1.0, 0.0, 1.0, 0.5, 0.0]);
            let sc = g.scale(lg, -2.0);
            let mk = g.mask(hc2, alloc::vec![2.0, 0.0]);
            let mks = g.sum_at(mk, alloc::vec![0, 1]);
            let pb = g.param(b);
            let pbs = g.sum_at(pb, alloc::vec![2]);
            g.sum(&[bce, sc, mks, pbs])
        });
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn clip_scales_to_max_norm() {
        let mut p = ParamSet::new();
        let a = p.add("a", Tensor { rows: 2, cols: 1, data: alloc::vec![0.0, 0.0] });
        let mut gr = Gradients::zeros_like(&p);
        gr.data[a.0] = alloc::vec![3.0, 4.0];
        assert_eq!(gr.clip_norm(1.0), 5.0);
        assert!((gr.global_norm() - 1.0).abs() < 1e-12);
        assert_eq!(gr.clip_norm(2.0), gr.global_norm());
    }

    #[test]
    fn expect_checks_shapes() {
        let mut p = ParamSet::new();
        p.add_zeros("w", 2, 3);
        assert!(p.expect("w", 2, 3).is_ok());
        assert!(matches!(p.expect("w", 3, 2), Err(ParamError::Shape { .. })));
        assert!(matches!(p.expect("v", 1, 1), Err(ParamError::Missing(_))));
    }
}
