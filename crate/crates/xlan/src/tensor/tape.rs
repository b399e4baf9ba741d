//! Wengert tape: eager recording of forward operations, reverse replay
//! for gradients.
//!
//! A `Tape` owns every intermediate tensor of one forward pass. Operations
//! return `Var` handles; `backward` seeds the adjoint of a scalar loss and
//! walks the recorded nodes once in exact reverse order. Gradients
//! accumulate (+=), so repeated backward calls without a reset add up.
//! The whole graph is freed when the tape is dropped.

use super::params::{ParamId, ParamSet};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a tensor recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub usize);

/// Elementwise nonlinearity selector for the bilinear blocks.
///
/// `CeluPlusOne` is elu(x)+1 computed branch-wise so that it equals
/// exp(x) bit-exactly on the negative half-line; `Exp` is the exact
/// exponential and is meant for analytic identity tests, not training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    CeluPlusOne,
    Exp,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    MatVec { m: Var, x: Var },
    Add { a: Var, b: Var },
    AddN { inputs: Vec<Var> },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    /// Broadcast product of a scalar `[1]` tensor with any tensor.
    ScaleBy { s: Var, x: Var },
    Scale { x: Var, c: f64 },
    Relu { x: Var },
    Elu { x: Var },
    CeluPlusOne { x: Var },
    Exp { x: Var },
    Sigmoid { x: Var },
    Tanh { x: Var },
    Softmax { x: Var },
    LogSumExp { x: Var },
    LayerNorm { x: Var, gain: Var, bias: Var },
    Sum { x: Var },
    Mean { x: Var },
    Concat { parts: Vec<Var> },
    Slice { x: Var, start: usize },
    SelectRow { m: Var, row: usize },
    Select { x: Var, idx: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    param: Option<ParamId>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Topologically ordered record of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad, grad: None, param: None });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn any_requires(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.requires(v))
    }

    // ── Leaves ──────────────────────────────────────────────────────

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable input that is not a parameter (used by tests and
    /// gradient checks on activations).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf bound to a persistent parameter; its gradient flows into
    /// `ParamSet::accumulate_grads`.
    pub fn param(&mut self, set: &ParamSet, id: ParamId) -> Var {
        let value = set.get(id).value.clone();
        let v = self.push(value, Op::Leaf, true);
        self.nodes[v.0].param = Some(id);
        v
    }

    // ── Accessors ───────────────────────────────────────────────────

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value.data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// Accumulated gradient, if backward has reached this tensor.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Iterate (param id, accumulated grad) for every param-bound leaf.
    pub(crate) fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.nodes.iter().filter_map(|n| match (n.param, n.grad.as_deref()) {
            (Some(id), Some(g)) => Some((id, g)),
            _ => None,
        })
    }

    fn shape_err(op: &'static str, expected: String, found: String) -> Error {
        Error::Shape { op, expected, found }
    }

    // ── Linear algebra ──────────────────────────────────────────────

    /// `a[m×k] · b[k×n] → [m×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Self::shape_err(
                "matmul",
                format!("[m×k]·[k×n], lhs {:?}", sa),
                format!("rhs {:?}", sb),
            ));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        let (da, db) = (self.data(a), self.data(b));
        for i in 0..m {
            for p in 0..k {
                let aip = da[i * k + p];
                for j in 0..n {
                    out[i * n + j] += aip * db[p * n + j];
                }
            }
        }
        let rg = self.any_requires(&[a, b]);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMul { a, b }, rg))
    }

    /// `m[r×c] · x[c] → [r]`.
    pub fn matvec(&mut self, m: Var, x: Var) -> Result<Var> {
        let (sm, sx) = (self.shape(m).to_vec(), self.shape(x).to_vec());
        if sm.len() != 2 || sx.len() != 1 || sm[1] != sx[0] {
            return Err(Self::shape_err(
                "matvec",
                format!("[r×c]·[c], lhs {:?}", sm),
                format!("rhs {:?}", sx),
            ));
        }
        let (r, c) = (sm[0], sm[1]);
        let (dm, dx) = (self.data(m), self.data(x));
        let out: Vec<f64> = (0..r)
            .map(|i| (0..c).map(|j| dm[i * c + j] * dx[j]).sum())
            .collect();
        let rg = self.any_requires(&[m, x]);
        Ok(self.push(Tensor::vector(out), Op::MatVec { m, x }, rg))
    }

    // ── Elementwise binary ──────────────────────────────────────────

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Self::shape_err(
                op,
                format!("{:?}", self.shape(a)),
                format!("{:?}", self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.any_requires(&[a, b]);
        Ok(self.push(Tensor { shape, data }, Op::Add { a, b }, rg))
    }

    /// Sum of any number of same-shaped tensors.
    pub fn add_n(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::Contract("add_n needs at least one input".into()))?;
        for &v in &inputs[1..] {
            self.same_shape("add_n", first, v)?;
        }
        let mut data = self.data(first).to_vec();
        for &v in &inputs[1..] {
            for (acc, x) in data.iter_mut().zip(self.data(v)) {
                *acc += x;
            }
        }
        let shape = self.shape(first).to_vec();
        let rg = self.any_requires(inputs);
        Ok(self.push(Tensor { shape, data }, Op::AddN { inputs: inputs.to_vec() }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x - y).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.any_requires(&[a, b]);
        Ok(self.push(Tensor { shape, data }, Op::Sub { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.any_requires(&[a, b]);
        Ok(self.push(Tensor { shape, data }, Op::Mul { a, b }, rg))
    }

    /// Broadcast product of a scalar tensor `s` (shape `[1]`) with `x`.
    pub fn scale_by(&mut self, s: Var, x: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(Self::shape_err(
                "scale_by",
                "[1] scalar".into(),
                format!("{:?}", self.shape(s)),
            ));
        }
        let sv = self.data(s)[0];
        let data = self.data(x).iter().map(|v| sv * v).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.any_requires(&[s, x]);
        Ok(self.push(Tensor { shape, data }, Op::ScaleBy { s, x }, rg))
    }

    /// Product with a compile-time constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let data = self.data(x).iter().map(|v| c * v).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.requires(x);
        self.push(Tensor { shape, data }, Op::Scale { x, c }, rg)
    }

    // ── Elementwise unary ───────────────────────────────────────────

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let data = self.data(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.requires(x);
        self.push(Tensor { shape, data }, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu { x })
    }

    pub fn elu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v < 0.0 { v.exp() - 1.0 } else { v }, Op::Elu { x })
    }

    /// elu(x)+1, branch-wise: exp(x) for x<0, x+1 for x≥0. Strictly
    /// positive, and bit-equal to exp on the negative half-line.
    pub fn celu_plus_one(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v < 0.0 { v.exp() } else { v + 1.0 }, Op::CeluPlusOne { x })
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh { x })
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Var {
        match kind {
            Activation::Relu => self.relu(x),
            Activation::CeluPlusOne => self.celu_plus_one(x),
            Activation::Exp => self.exp(x),
        }
    }

    // ── Normalization ───────────────────────────────────────────────

    /// Max-subtracted softmax over a vector.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        if !self.value(x).is_vector() || self.value(x).numel() == 0 {
            return Err(Self::shape_err(
                "softmax",
                "non-empty vector".into(),
                format!("{:?}", self.shape(x)),
            ));
        }
        let d = self.data(x);
        let max = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = d.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let data: Vec<f64> = exps.iter().map(|e| e / sum).collect();
        let rg = self.requires(x);
        Ok(self.push(Tensor::vector(data), Op::Softmax { x }, rg))
    }

    /// log Σ exp over a vector, max-subtracted; returns a `[1]` scalar.
    pub fn logsumexp(&mut self, x: Var) -> Result<Var> {
        if !self.value(x).is_vector() || self.value(x).numel() == 0 {
            return Err(Self::shape_err(
                "logsumexp",
                "non-empty vector".into(),
                format!("{:?}", self.shape(x)),
            ));
        }
        let d = self.data(x);
        let max = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = d.iter().map(|v| (v - max).exp()).sum();
        let rg = self.requires(x);
        Ok(self.push(Tensor::scalar(max + sum.ln()), Op::LogSumExp { x }, rg))
    }

    /// (x − mean)/sqrt(var + ε) · gain + bias over the whole vector,
    /// population variance, ε = 1e-5.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        self.same_shape("layer_norm", x, gain)?;
        self.same_shape("layer_norm", x, bias)?;
        if !self.value(x).is_vector() {
            return Err(Self::shape_err(
                "layer_norm",
                "vector".into(),
                format!("{:?}", self.shape(x)),
            ));
        }
        let d = self.data(x);
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let data: Vec<f64> = d
            .iter()
            .zip(self.data(gain).iter().zip(self.data(bias)))
            .map(|(v, (g, b))| (v - mean) * inv_std * g + b)
            .collect();
        let rg = self.any_requires(&[x, gain, bias]);
        Ok(self.push(Tensor::vector(data), Op::LayerNorm { x, gain, bias }, rg))
    }

    // ── Reductions ──────────────────────────────────────────────────

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        let rg = self.requires(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s: f64 = self.data(x).iter().sum();
        let rg = self.requires(x);
        self.push(Tensor::scalar(s / n), Op::Mean { x }, rg)
    }

    // ── Shape surgery ───────────────────────────────────────────────

    /// Concatenate vectors into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat needs at least one input".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            if !self.value(p).is_vector() {
                return Err(Self::shape_err(
                    "concat",
                    "vectors".into(),
                    format!("{:?}", self.shape(p)),
                ));
            }
            data.extend_from_slice(self.data(p));
        }
        let rg = self.any_requires(parts);
        Ok(self.push(Tensor::vector(data), Op::Concat { parts: parts.to_vec() }, rg))
    }

    /// Contiguous sub-vector `[start, start+len)`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let total = self.value(x).numel();
        if !self.value(x).is_vector() || start + len > total || len == 0 {
            return Err(Self::shape_err(
                "slice",
                format!("range within [0,{total})"),
                format!("[{start},{})", start + len),
            ));
        }
        let data = self.data(x)[start..start + len].to_vec();
        let rg = self.requires(x);
        Ok(self.push(Tensor::vector(data), Op::Slice { x, start }, rg))
    }

    /// Row of a matrix as a vector (embedding lookup).
    pub fn select_row(&mut self, m: Var, row: usize) -> Result<Var> {
        let sm = self.shape(m).to_vec();
        if sm.len() != 2 || row >= sm[0] {
            return Err(Self::shape_err(
                "select_row",
                format!("row < {}", sm.first().copied().unwrap_or(0)),
                format!("row {row} of {:?}", sm),
            ));
        }
        let cols = sm[1];
        let data = self.data(m)[row * cols..(row + 1) * cols].to_vec();
        let rg = self.requires(m);
        Ok(self.push(Tensor::vector(data), Op::SelectRow { m, row }, rg))
    }

    /// Single element of a vector as a `[1]` scalar.
    pub fn select(&mut self, x: Var, idx: usize) -> Result<Var> {
        let n = self.value(x).numel();
        if !self.value(x).is_vector() || idx >= n {
            return Err(Self::shape_err(
                "select",
                format!("index < {n}"),
                format!("index {idx}"),
            ));
        }
        let v = self.data(x)[idx];
        let rg = self.requires(x);
        Ok(self.push(Tensor::scalar(v), Op::Select { x, idx }, rg))
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Walks the tape once in exact
    /// reverse recording order; accumulates dLoss/dT into every
    /// requires-grad tensor reachable from the loss.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        // Fresh adjoints per call; fold into .grad at the end so repeated
        // backward calls accumulate.
        let n = self.nodes.len();
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; n];
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match adj[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut adj);
            match &mut self.nodes[i].grad {
                Some(acc) => {
                    for (a, v) in acc.iter_mut().zip(&g) {
                        *a += v;
                    }
                }
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let spread = |adj: &mut [Option<Vec<f64>>], v: Var, contrib: &dyn Fn(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = adj[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            contrib(slot);
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let (da, db) = (self.data(*a), self.data(*b));
                // dA = g · Bᵀ
                spread(adj, *a, &|ga| {
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * db[p * n + j];
                            }
                            ga[i * k + p] += s;
                        }
                    }
                });
                // dB = Aᵀ · g
                spread(adj, *b, &|gb| {
                    for p in 0..k {
                        for j in 0..n {
                            let mut s = 0.0;
                            for i in 0..m {
                                s += da[i * k + p] * g[i * n + j];
                            }
                            gb[p * n + j] += s;
                        }
                    }
                });
            }
            Op::MatVec { m, x } => {
                let (r, c) = (self.shape(*m)[0], self.shape(*m)[1]);
                let (dm, dx) = (self.data(*m), self.data(*x));
                spread(adj, *m, &|gm| {
                    for i in 0..r {
                        for j in 0..c {
                            gm[i * c + j] += g[i] * dx[j];
                        }
                    }
                });
                spread(adj, *x, &|gx| {
                    for j in 0..c {
                        let mut s = 0.0;
                        for i in 0..r {
                            s += dm[i * c + j] * g[i];
                        }
                        gx[j] += s;
                    }
                });
            }
            Op::Add { a, b } => {
                spread(adj, *a, &|ga| add_into(ga, g, 1.0));
                spread(adj, *b, &|gb| add_into(gb, g, 1.0));
            }
            Op::AddN { inputs } => {
                for &v in inputs {
                    spread(adj, v, &|gv| add_into(gv, g, 1.0));
                }
            }
            Op::Sub { a, b } => {
                spread(adj, *a, &|ga| add_into(ga, g, 1.0));
                spread(adj, *b, &|gb| add_into(gb, g, -1.0));
            }
            Op::Mul { a, b } => {
                let (da, db) = (self.data(*a), self.data(*b));
                spread(adj, *a, &|ga| {
                    for ((t, gi), bi) in ga.iter_mut().zip(g).zip(db) {
                        *t += gi * bi;
                    }
                });
                spread(adj, *b, &|gb| {
                    for ((t, gi), ai) in gb.iter_mut().zip(g).zip(da) {
                        *t += gi * ai;
                    }
                });
            }
            Op::ScaleBy { s, x } => {
                let sv = self.data(*s)[0];
                let dx = self.data(*x);
                spread(adj, *s, &|gs| {
                    gs[0] += g.iter().zip(dx).map(|(gi, xi)| gi * xi).sum::<f64>();
                });
                spread(adj, *x, &|gx| add_into(gx, g, sv));
            }
            Op::Scale { x, c } => spread(adj, *x, &|gx| add_into(gx, g, *c)),
            Op::Relu { x } => {
                let dx = self.data(*x);
                spread(adj, *x, &|gx| {
                    for ((t, gi), xi) in gx.iter_mut().zip(g).zip(dx) {
                        if *xi > 0.0 {
                            *t += gi;
                        }
                    }
                });
            }
            Op::Elu { x } => {
                let dx = self.data(*x);
                spread(adj, *x, &|gx| {
                    for ((t, gi), xi) in gx.iter_mut().zip(g).zip(dx) {
                        *t += if *xi < 0.0 { gi * xi.exp() } else { *gi };
                    }
                });
            }
            Op::CeluPlusOne { x } => {
                let dx = self.data(*x);
                // derivative: exp(x) below zero (= the stored output), 1 above
                let out = &self.nodes[i].value.data;
                spread(adj, *x, &|gx| {
                    for (j, (t, gi)) in gx.iter_mut().zip(g).enumerate() {
                        *t += if dx[j] < 0.0 { gi * out[j] } else { *gi };
                    }
                });
            }
            Op::Exp { x } => {
                let out = &self.nodes[i].value.data;
                spread(adj, *x, &|gx| {
                    for ((t, gi), oi) in gx.iter_mut().zip(g).zip(out) {
                        *t += gi * oi;
                    }
                });
            }
            Op::Sigmoid { x } => {
                let out = &self.nodes[i].value.data;
                spread(adj, *x, &|gx| {
                    for ((t, gi), oi) in gx.iter_mut().zip(g).zip(out) {
                        *t += gi * oi * (1.0 - oi);
                    }
                });
            }
            Op::Tanh { x } => {
                let out = &self.nodes[i].value.data;
                spread(adj, *x, &|gx| {
                    for ((t, gi), oi) in gx.iter_mut().zip(g).zip(out) {
                        *t += gi * (1.0 - oi * oi);
                    }
                });
            }
            Op::Softmax { x } => {
                let out = &self.nodes[i].value.data;
                let dot: f64 = g.iter().zip(out).map(|(gi, si)| gi * si).sum();
                spread(adj, *x, &|gx| {
                    for ((t, gi), si) in gx.iter_mut().zip(g).zip(out) {
                        *t += si * (gi - dot);
                    }
                });
            }
            Op::LogSumExp { x } => {
                let dx = self.data(*x);
                let max = dx.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = dx.iter().map(|v| (v - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                spread(adj, *x, &|gx| {
                    for (t, e) in gx.iter_mut().zip(&exps) {
                        *t += g[0] * e / sum;
                    }
                });
            }
            Op::LayerNorm { x, gain, bias } => {
                let dx = self.data(*x);
                let dgain = self.data(*gain);
                let n = dx.len();
                let nf = n as f64;
                let mean = dx.iter().sum::<f64>() / nf;
                let var = dx.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
                let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                let xhat: Vec<f64> = dx.iter().map(|v| (v - mean) * inv_std).collect();
                let dxhat: Vec<f64> = g.iter().zip(dgain).map(|(gi, w)| gi * w).collect();
                let s1: f64 = dxhat.iter().sum();
                let s2: f64 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                spread(adj, *x, &|gx| {
                    for j in 0..n {
                        gx[j] += inv_std / nf * (nf * dxhat[j] - s1 - xhat[j] * s2);
                    }
                });
                spread(adj, *gain, &|gg| {
                    for ((t, gi), xh) in gg.iter_mut().zip(g).zip(&xhat) {
                        *t += gi * xh;
                    }
                });
                spread(adj, *bias, &|gb| add_into(gb, g, 1.0));
            }
            Op::Sum { x } => {
                spread(adj, *x, &|gx| {
                    for t in gx.iter_mut() {
                        *t += g[0];
                    }
                });
            }
            Op::Mean { x } => {
                let n = self.nodes[x.0].value.numel() as f64;
                spread(adj, *x, &|gx| {
                    for t in gx.iter_mut() {
                        *t += g[0] / n;
                    }
                });
            }
            Op::Concat { parts } => {
                let mut off = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.numel();
                    spread(adj, p, &|gp| add_into(gp, &g[off..off + len], 1.0));
                    off += len;
                }
            }
            Op::Slice { x, start } => {
                spread(adj, *x, &|gx| {
                    for (j, gi) in g.iter().enumerate() {
                        gx[start + j] += gi;
                    }
                });
            }
            Op::SelectRow { m, row } => {
                let cols = self.shape(*m)[1];
                spread(adj, *m, &|gm| {
                    for (j, gi) in g.iter().enumerate() {
                        gm[row * cols + j] += gi;
                    }
                });
            }
            Op::Select { x, idx } => {
                spread(adj, *x, &|gx| {
                    gx[*idx] += g[0];
                });
            }
        }
    }
}

fn add_into(acc: &mut [f64], src: &[f64], scale: f64) {
    for (a, s) in acc.iter_mut().zip(src) {
        *a += scale * s;
    }
}
