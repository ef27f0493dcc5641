//! Tape-recorded computation graph.
//!
//! Every op appends a node holding its forward value. Nodes are created in
//! execution order, so the node vector is already a topological order and
//! [`Graph::backward`] walks it once in reverse.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Result, TensorError};
use crate::float::{gemm, Float, MatLayout};
use crate::shape::{broadcast_shape, for_each_broadcast, strides, walk, Access};
use crate::tensor::{numel, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum UnaryKind {
    Gelu,
    Tanh,
    Exp,
    Log,
    Sqrt,
    Softplus,
    Square,
}

#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    BatchMatMul { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize, trans_b: bool },
    Binary { kind: BinaryKind, a: Var, b: Var },
    Scale { a: Var, c: T },
    AddScalar { a: Var },
    Unary { kind: UnaryKind, a: Var },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { a: Var, axis: usize, start: usize },
    Permute { a: Var, axes: Vec<usize> },
    Reshape { a: Var },
    BroadcastTo { a: Var },
    IndexSelect { a: Var, axis: usize, indices: Vec<usize> },
    Softmax { a: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, mean: Vec<T>, rstd: Vec<T> },
    Sum { a: Var },
    Mean { a: Var },
    SumLast { a: Var },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, count: usize },
    L2Distance { a: Var, b: Var },
}

impl<T> Op<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::BatchMatMul { .. } => "bmm",
            Op::Binary { kind: BinaryKind::Add, .. } => "add",
            Op::Binary { kind: BinaryKind::Sub, .. } => "sub",
            Op::Binary { kind: BinaryKind::Mul, .. } => "mul",
            Op::Binary { kind: BinaryKind::Div, .. } => "div",
            Op::Scale { .. } => "scale",
            Op::AddScalar { .. } => "add_scalar",
            Op::Unary { kind, .. } => match kind {
                UnaryKind::Gelu => "gelu",
                UnaryKind::Tanh => "tanh",
                UnaryKind::Exp => "exp",
                UnaryKind::Log => "log",
                UnaryKind::Sqrt => "sqrt",
                UnaryKind::Softplus => "softplus",
                UnaryKind::Square => "square",
            },
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Permute { .. } => "permute",
            Op::Reshape { .. } => "reshape",
            Op::BroadcastTo { .. } => "broadcast_to",
            Op::IndexSelect { .. } => "index_select",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::SumLast { .. } => "sum_last",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::L2Distance { .. } => "l2_distance",
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Recorded forward computation.
pub struct Graph<T: Float> {
    pub(crate) nodes: Vec<Node<T>>,
    params: Vec<(String, Var)>,
    param_index: HashMap<String, Var>,
    pub(crate) consumed: bool,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// `tanh` through a single `exp`; saturates correctly at both ends.
#[inline]
pub(crate) fn fast_tanh<T: Float>(u: T) -> T {
    let two = T::one() + T::one();
    T::one() - two / ((two * u).exp() + T::one())
}

pub(crate) fn gelu_tanh<T: Float>(x: T) -> T {
    let c = T::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt());
    let k = T::from_f64_lossy(0.044715);
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + fast_tanh(c * (x + k * x * x * x)))
}

pub(crate) fn softplus<T: Float>(x: T) -> T {
    // log(1 + e^x) = max(x, 0) + log1p(e^-|x|)
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), params: Vec::new(), param_index: HashMap::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of recorded nodes per op kind.
    pub fn op_counts(&self) -> BTreeMap<&'static str, usize> {
        let mut m = BTreeMap::new();
        for n in &self.nodes {
            *m.entry(n.op.name()).or_insert(0) += 1;
        }
        m
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf holding a constant or input (no gradient).
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf that receives a gradient.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Named parameter leaf, bound at most once per graph.
    pub fn param(&mut self, name: &str, t: &Tensor<T>, trainable: bool) -> Var {
        if let Some(&v) = self.param_index.get(name) {
            return v;
        }
        let v = self.push(t.clone(), Op::Leaf, trainable);
        self.params.push((name.to_string(), v));
        self.param_index.insert(name.to_string(), v);
        v
    }

    /// Parameters bound into this graph, in binding order.
    pub fn bound_params(&self) -> &[(String, Var)] {
        &self.params
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.param_index.get(name).copied()
    }

    // ---------------------------------------------------------------- linear algebra

    /// `a[.., k] @ b[k, n] -> [.., n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.is_empty() || sb.len() != 2 || *sa.last().unwrap() != sb[0] {
            return Err(TensorError::shape("matmul", &sa, &sb));
        }
        let k = sb[0];
        let n = sb[1];
        let m = numel(&sa) / k.max(1);
        let mut out = vec![T::zero(); m * n];
        gemm(
            self.value(a).data(),
            MatLayout::new(m, k),
            self.value(b).data(),
            MatLayout::new(k, n),
            &mut out,
            false,
        );
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = n;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MatMul { a, b, m, k, n }, rg))
    }

    /// Batched product `a[B,m,k] @ b[B,k,n]`, or `a @ b^T` for `b[B,n,k]` when
    /// `trans_b` is set.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(TensorError::shape("bmm", &sa, &sb));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(TensorError::shape("bmm", &sa, &sb));
        }
        let mut out = vec![T::zero(); batch * m * n];
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            let lb = if trans_b { MatLayout::new(n, k).t() } else { MatLayout::new(k, n) };
            for i in 0..batch {
                gemm(
                    &av[i * m * k..(i + 1) * m * k],
                    MatLayout::new(m, k),
                    &bv[i * k * n..(i + 1) * k * n],
                    lb,
                    &mut out[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            Tensor::from_parts(vec![batch, m, n], out),
            Op::BatchMatMul { a, b, batch, m, k, n, trans_b },
            rg,
        ))
    }

    // ---------------------------------------------------------------- elementwise

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        };
        let out_shape = broadcast_shape(&sa, &sb).ok_or_else(|| TensorError::shape(name, &sa, &sb))?;
        let acc_a = Access::new(&sa, &out_shape);
        let acc_b = Access::new(&sb, &out_shape);
        let mut out = vec![T::zero(); numel(&out_shape)];
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            match kind {
                BinaryKind::Add => for_each_broadcast(&out_shape, &acc_a, &acc_b, |o, i, j| out[o] = av[i] + bv[j]),
                BinaryKind::Sub => for_each_broadcast(&out_shape, &acc_a, &acc_b, |o, i, j| out[o] = av[i] - bv[j]),
                BinaryKind::Mul => for_each_broadcast(&out_shape, &acc_a, &acc_b, |o, i, j| out[o] = av[i] * bv[j]),
                BinaryKind::Div => for_each_broadcast(&out_shape, &acc_a, &acc_b, |o, i, j| out[o] = av[i] / bv[j]),
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(out_shape, out), Op::Binary { kind, a, b }, rg))
    }

    /// Broadcasting addition.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = T::from_f64_lossy(c);
        let value = self.value(a).map(|v| v * c);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale { a, c }, rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let c = T::from_f64_lossy(c);
        let value = self.value(a).map(|v| v + c);
        let rg = self.rg(&[a]);
        self.push(value, Op::AddScalar { a }, rg)
    }

    fn unary(&mut self, kind: UnaryKind, a: Var) -> Var {
        let f: fn(T) -> T = match kind {
            UnaryKind::Gelu => gelu_tanh::<T>,
            UnaryKind::Tanh => |x: T| x.tanh(),
            UnaryKind::Exp => |x: T| x.exp(),
            UnaryKind::Log => |x: T| x.ln(),
            UnaryKind::Sqrt => |x: T| x.sqrt(),
            UnaryKind::Softplus => softplus::<T>,
            UnaryKind::Square => |x: T| x * x,
        };
        let value = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(value, Op::Unary { kind, a }, rg)
    }

    /// GELU, tanh approximation (GPT-2 variant).
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Gelu, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Tanh, a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Log, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Sqrt, a)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Softplus, a)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Square, a)
    }

    // ---------------------------------------------------------------- structural

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| TensorError::invalid("concat", "no inputs", &[]))?;
        let s0 = self.shape(*first).to_vec();
        if axis >= s0.len() {
            return Err(TensorError::invalid("concat", format!("axis {axis} out of range"), &s0));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let ok = s.len() == s0.len() && s.iter().zip(&s0).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !ok {
                return Err(TensorError::shape("concat", &s0, s));
            }
            total += s[axis];
        }
        let outer = numel(&s0[..axis]);
        let inner = numel(&s0[axis + 1..]);
        let mut out_shape = s0.clone();
        out_shape[axis] = total;
        let mut out = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for &v in inputs {
                let w = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * w..(o + 1) * w]);
            }
        }
        let rg = self.rg(inputs);
        Ok(self.push(Tensor::from_parts(out_shape, out), Op::Concat { inputs: inputs.to_vec(), axis }, rg))
    }

    /// `a[.., start..end, ..]` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || start > end || end > s[axis] {
            return Err(TensorError::invalid("slice", format!("axis {axis} range {start}..{end}"), &s));
        }
        let outer = numel(&s[..axis]);
        let inner = numel(&s[axis + 1..]);
        let w = s[axis] * inner;
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        {
            let d = self.value(a).data();
            for o in 0..outer {
                out.extend_from_slice(&d[o * w + start * inner..o * w + end * inner]);
            }
        }
        let mut out_shape = s;
        out_shape[axis] = end - start;
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::from_parts(out_shape, out), Op::Slice { a, axis, start }, rg))
    }

    /// Axis permutation: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let mut seen = vec![false; s.len()];
        if axes.len() != s.len() || axes.iter().any(|&x| x >= s.len() || std::mem::replace(&mut seen[x], true)) {
            return Err(TensorError::invalid("permute", format!("bad axes {axes:?}"), &s));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&i| s[i]).collect();
        let in_strides = strides(&s);
        let src: Vec<usize> = axes.iter().map(|&i| in_strides[i]).collect();
        let mut out = vec![T::zero(); numel(&s)];
        {
            let d = self.value(a).data();
            walk(&out_shape, &[&src], |o, [i]| out[o] = d[i]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::from_parts(out_shape, out), Op::Permute { a, axes: axes.to_vec() }, rg))
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let r = self.shape(a).len();
        if r < 2 {
            return Err(TensorError::invalid("transpose", "rank < 2", self.shape(a)));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 1, r - 2);
        self.permute(a, &axes)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let s = self.shape(a);
        if numel(s) != numel(shape) {
            return Err(TensorError::shape("reshape", s, shape));
        }
        let value = Tensor::from_parts(shape.to_vec(), self.value(a).data().to_vec());
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Reshape { a }, rg))
    }

    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        match broadcast_shape(&s, shape) {
            Some(out) if out == shape => {}
            _ => return Err(TensorError::shape("broadcast_to", &s, shape)),
        }
        let acc = Access::new(&s, shape);
        let mut out = vec![T::zero(); numel(shape)];
        {
            let d = self.value(a).data();
            for_each_broadcast(shape, &acc, &Access::Identity, |o, i, _| out[o] = d[i]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::from_parts(shape.to_vec(), out), Op::BroadcastTo { a }, rg))
    }

    /// Gather entries along `axis`. Embedding lookup is `index_select(table, 0, ids)`.
    pub fn index_select(&mut self, a: Var, axis: usize, indices: &[usize]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() {
            return Err(TensorError::invalid("index_select", format!("axis {axis}"), &s));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= s[axis]) {
            return Err(TensorError::invalid("index_select", format!("index {bad} out of range"), &s));
        }
        let outer = numel(&s[..axis]);
        let inner = numel(&s[axis + 1..]);
        let w = s[axis] * inner;
        let mut out = Vec::with_capacity(outer * indices.len() * inner);
        {
            let d = self.value(a).data();
            for o in 0..outer {
                for &i in indices {
                    out.extend_from_slice(&d[o * w + i * inner..o * w + (i + 1) * inner]);
                }
            }
        }
        let mut out_shape = s;
        out_shape[axis] = indices.len();
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::IndexSelect { a, axis, indices: indices.to_vec() },
            rg,
        ))
    }

    /// Embedding lookup: rows of `table[V, d]` for `ids`, shape `[ids.len(), d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        if self.shape(table).len() != 2 {
            return Err(TensorError::invalid("embedding", "table must be 2-D", self.shape(table)));
        }
        self.index_select(table, 0, ids)
    }

    // ---------------------------------------------------------------- normalization

    /// Softmax over the last axis. With `causal`, the last two axes must be
    /// square and entry `(s, t)` with `t > s` receives probability 0 (the
    /// additive `-inf` mask).
    pub fn softmax(&mut self, a: Var, causal: bool) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.is_empty() {
            return Err(TensorError::invalid("softmax", "scalar input", &s));
        }
        let w = *s.last().unwrap();
        let rows_per_block = if causal {
            if s.len() < 2 || s[s.len() - 2] != w {
                return Err(TensorError::invalid("softmax", "causal mask needs square trailing axes", &s));
            }
            w
        } else {
            1
        };
        let d = self.value(a).data();
        let mut out = vec![T::zero(); d.len()];
        for (r, (src, dst)) in d.chunks(w.max(1)).zip(out.chunks_mut(w.max(1))).enumerate() {
            let lim = if causal { r % rows_per_block + 1 } else { w };
            let mx = src[..lim].iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for t in 0..lim {
                let e = (src[t] - mx).exp();
                dst[t] = e;
                z += e;
            }
            for v in &mut dst[..lim] {
                *v /= z;
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::from_parts(s, out), Op::Softmax { a }, rg))
    }

    /// Layer normalization over the last axis with learned `gain`/`bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let w = *s.last().ok_or_else(|| TensorError::invalid("layer_norm", "scalar input", &s))?;
        if self.shape(gain) != [w] || self.shape(bias) != [w] {
            return Err(TensorError::shape("layer_norm", &s, self.shape(gain)));
        }
        let eps = T::from_f64_lossy(eps);
        let wt = T::from_usize(w).unwrap();
        let xd = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = xd.len() / w.max(1);
        let mut out = vec![T::zero(); xd.len()];
        let mut mean = Vec::with_capacity(rows);
        let mut rstd = Vec::with_capacity(rows);
        for (src, dst) in xd.chunks(w).zip(out.chunks_mut(w)) {
            let mu = src.iter().copied().sum::<T>() / wt;
            let var = src.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / wt;
            let r = T::one() / (var + eps).sqrt();
            for i in 0..w {
                dst[i] = (src[i] - mu) * r * g[i] + b[i];
            }
            mean.push(mu);
            rstd.push(r);
        }
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(Tensor::from_parts(s, out), Op::LayerNorm { x, gain, bias, mean, rstd }, rg))
    }

    // ---------------------------------------------------------------- reductions

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).data().iter().copied().sum::<T>();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(v), Op::Sum { a }, rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.value(a).data();
        let v = d.iter().copied().sum::<T>() / T::from_usize(d.len().max(1)).unwrap();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(v), Op::Mean { a }, rg)
    }

    /// Sum over the last axis, dropping it.
    pub fn sum_last(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let w = *s.last().ok_or_else(|| TensorError::invalid("sum_last", "scalar input", &s))?;
        let out: Vec<T> = self.value(a).data().chunks(w.max(1)).map(|c| c.iter().copied().sum()).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::from_parts(s[..s.len() - 1].to_vec(), out), Op::SumLast { a }, rg))
    }

    // ---------------------------------------------------------------- losses

    /// Mean negative log-likelihood of `targets` under `softmax(logits)`.
    /// `logits` is `[N, V]`; rows with `None` targets are skipped.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != targets.len() {
            return Err(TensorError::shape("cross_entropy", &s, &[targets.len()]));
        }
        let v = s[1];
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= v) {
            return Err(TensorError::invalid("cross_entropy", format!("target {bad} >= vocab {v}"), &s));
        }
        let d = self.value(logits).data();
        let mut total = 0.0f64;
        let mut count = 0usize;
        for (row, t) in d.chunks(v).zip(targets) {
            if let Some(t) = *t {
                let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = mx + row.iter().map(|&x| (x - mx).exp()).sum::<T>().ln();
                total += (lse - row[t]).to_f64_lossy();
                count += 1;
            }
        }
        let loss = if count > 0 { total / count as f64 } else { 0.0 };
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(T::from_f64_lossy(loss)),
            Op::CrossEntropy { logits, targets: targets.to_vec(), count },
            rg,
        ))
    }

    /// Euclidean distance between rows of `a` and `b` over the last axis.
    pub fn l2_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa != self.shape(b) || sa.is_empty() {
            return Err(TensorError::shape("l2_distance", &sa, self.shape(b)));
        }
        let w = *sa.last().unwrap();
        let out: Vec<T> = self
            .value(a)
            .data()
            .chunks(w)
            .zip(self.value(b).data().chunks(w))
            .map(|(x, y)| x.iter().zip(y).map(|(&p, &q)| (p - q) * (p - q)).sum::<T>().sqrt())
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(sa[..sa.len() - 1].to_vec(), out), Op::L2Distance { a, b }, rg))
    }
}
