//! Reverse-mode sweep over a recorded [`Graph`].

use crate::error::{Result, TensorError};
use crate::float::{gemm, Float, MatLayout};
use crate::graph::{fast_tanh, BinaryKind, Graph, Op, UnaryKind, Var};
use crate::shape::{broadcast_shape, for_each_broadcast, strides, walk, Access};
use crate::tensor::{numel, Tensor};

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Grads<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Float> Grads<T> {
    /// Gradient of the loss with respect to `v`; `None` when `v` does not
    /// require a gradient or the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<Tensor<T>> {
        self.grads
            .get(v.0)?
            .as_ref()
            .map(|g| Tensor::from_parts(self.shapes[v.0].clone(), g.clone()))
    }

    /// Borrowed gradient data for `v`.
    pub fn data(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0)?.as_deref()
    }

    /// Gradient or zeros of the right shape.
    pub fn get_or_zeros(&self, v: Var) -> Tensor<T> {
        self.get(v).unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn acc<T: Float>(slot: &mut Option<Vec<T>>, len: usize) -> &mut Vec<T> {
    slot.get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Float> Graph<T> {
    /// Backpropagate from a scalar `loss`. A graph supports one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Grads<T>> {
        if self.consumed {
            return Err(TensorError::GraphConsumed);
        }
        let ls = self.shape(loss);
        if numel(ls) != 1 {
            return Err(TensorError::NonScalarLoss(ls.to_vec()));
        }
        self.consumed = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; n];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Grads { grads, shapes })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                if self.wants(a) {
                    let ga = acc(&mut grads[a.0], m * k);
                    gemm(g, MatLayout::new(m, n), self.value(b).data(), MatLayout::new(k, n).t(), ga, true);
                }
                if self.wants(b) {
                    let gb = acc(&mut grads[b.0], k * n);
                    gemm(self.value(a).data(), MatLayout::new(m, k).t(), g, MatLayout::new(m, n), gb, true);
                }
            }
            &Op::BatchMatMul { a, b, batch, m, k, n, trans_b } => {
                let av = self.value(a).data();
                let bv = self.value(b).data();
                if self.wants(a) {
                    let ga = acc(&mut grads[a.0], batch * m * k);
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let bi = &bv[i * k * n..(i + 1) * k * n];
                        let lb = if trans_b { MatLayout::new(n, k) } else { MatLayout::new(k, n).t() };
                        gemm(gi, MatLayout::new(m, n), bi, lb, &mut ga[i * m * k..(i + 1) * m * k], true);
                    }
                }
                if self.wants(b) {
                    let gb = acc(&mut grads[b.0], batch * k * n);
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let ai = &av[i * m * k..(i + 1) * m * k];
                        let dst = &mut gb[i * k * n..(i + 1) * k * n];
                        if trans_b {
                            gemm(gi, MatLayout::new(m, n).t(), ai, MatLayout::new(m, k), dst, true);
                        } else {
                            gemm(ai, MatLayout::new(m, k).t(), gi, MatLayout::new(m, n), dst, true);
                        }
                    }
                }
            }
            &Op::Binary { kind, a, b } => self.backprop_binary(kind, a, b, out.shape(), g, grads),
            &Op::Scale { a, c } => {
                if self.wants(a) {
                    let ga = acc(&mut grads[a.0], g.len());
                    ga.iter_mut().zip(g).for_each(|(d, &v)| *d += v * c);
                }
            }
            &Op::AddScalar { a } | &Op::Reshape { a } => {
                if self.wants(a) {
                    let ga = acc(&mut grads[a.0], g.len());
                    ga.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
                }
            }
            &Op::Unary { kind, a } => {
                if self.wants(a) {
                    let x = self.value(a).data();
                    let y = out.data();
                    let ga = acc(&mut grads[a.0], g.len());
                    unary_backward(kind, x, y, g, ga);
                }
            }
            Op::Concat { inputs, axis } => {
                let s = out.shape();
                let outer = numel(&s[..*axis]);
                let inner = numel(&s[axis + 1..]);
                let total_w = s[*axis] * inner;
                let mut off = 0;
                for &v in inputs {
                    let w = self.shape(v)[*axis] * inner;
                    if self.wants(v) {
                        let gv = acc(&mut grads[v.0], outer * w);
                        for o in 0..outer {
                            let src = &g[o * total_w + off..o * total_w + off + w];
                            gv[o * w..(o + 1) * w].iter_mut().zip(src).for_each(|(d, &x)| *d += x);
                        }
                    }
                    off += w;
                }
            }
            &Op::Slice { a, axis, start } => {
                if self.wants(a) {
                    let s = self.shape(a);
                    let outer = numel(&s[..axis]);
                    let inner = numel(&s[axis + 1..]);
                    let w_in = s[axis] * inner;
                    let w_out = out.shape()[axis] * inner;
                    let ga = acc(&mut grads[a.0], numel(s));
                    for o in 0..outer {
                        let dst = &mut ga[o * w_in + start * inner..o * w_in + start * inner + w_out];
                        dst.iter_mut().zip(&g[o * w_out..(o + 1) * w_out]).for_each(|(d, &x)| *d += x);
                    }
                }
            }
            Op::Permute { a, axes } => {
                if self.wants(*a) {
                    let s = self.shape(*a);
                    let in_strides = strides(s);
                    let src: Vec<usize> = axes.iter().map(|&i| in_strides[i]).collect();
                    let ga = acc(&mut grads[a.0], numel(s));
                    walk(out.shape(), &[&src], |o, [i]| ga[i] += g[o]);
                }
            }
            &Op::BroadcastTo { a } => {
                if self.wants(a) {
                    let s = self.shape(a);
                    let acc_a = Access::new(s, out.shape());
                    let ga = acc(&mut grads[a.0], numel(s));
                    for_each_broadcast(out.shape(), &acc_a, &Access::Identity, |o, i, _| ga[i] += g[o]);
                }
            }
            Op::IndexSelect { a, axis, indices } => {
                if self.wants(*a) {
                    let s = self.shape(*a);
                    let outer = numel(&s[..*axis]);
                    let inner = numel(&s[axis + 1..]);
                    let w_in = s[*axis] * inner;
                    let w_out = indices.len() * inner;
                    let ga = acc(&mut grads[a.0], numel(s));
                    for o in 0..outer {
                        for (j, &i) in indices.iter().enumerate() {
                            let src = &g[o * w_out + j * inner..o * w_out + (j + 1) * inner];
                            let dst = &mut ga[o * w_in + i * inner..o * w_in + (i + 1) * inner];
                            dst.iter_mut().zip(src).for_each(|(d, &x)| *d += x);
                        }
                    }
                }
            }
            &Op::Softmax { a, .. } => {
                if self.wants(a) {
                    let w = *out.shape().last().unwrap();
                    let ga = acc(&mut grads[a.0], g.len());
                    for ((y, gy), dst) in out.data().chunks(w).zip(g.chunks(w)).zip(ga.chunks_mut(w)) {
                        let dot: T = y.iter().zip(gy).map(|(&p, &q)| p * q).sum();
                        for t in 0..w {
                            dst[t] += y[t] * (gy[t] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, mean, rstd } => {
                let w = *out.shape().last().unwrap();
                let wt = T::from_usize(w).unwrap();
                let xd = self.value(*x).data();
                let gd = self.value(*gain).data();
                if self.wants(*x) {
                    let gx = acc(&mut grads[x.0], xd.len());
                    let mut dxhat = vec![T::zero(); w];
                    for (r, ((src, gy), dst)) in xd.chunks(w).zip(g.chunks(w)).zip(gx.chunks_mut(w)).enumerate() {
                        let (mu, rs) = (mean[r], rstd[r]);
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for i in 0..w {
                            dxhat[i] = gy[i] * gd[i];
                            m1 += dxhat[i];
                            m2 += dxhat[i] * (src[i] - mu) * rs;
                        }
                        m1 /= wt;
                        m2 /= wt;
                        for i in 0..w {
                            let xhat = (src[i] - mu) * rs;
                            dst[i] += rs * (dxhat[i] - m1 - xhat * m2);
                        }
                    }
                }
                if self.wants(*gain) {
                    let gg = acc(&mut grads[gain.0], w);
                    for (r, (src, gy)) in xd.chunks(w).zip(g.chunks(w)).enumerate() {
                        for i in 0..w {
                            gg[i] += gy[i] * (src[i] - mean[r]) * rstd[r];
                        }
                    }
                }
                if self.wants(*bias) {
                    let gb = acc(&mut grads[bias.0], w);
                    for gy in g.chunks(w) {
                        gb.iter_mut().zip(gy).for_each(|(d, &v)| *d += v);
                    }
                }
            }
            &Op::Sum { a } | &Op::Mean { a } => {
                if self.wants(a) {
                    let len = self.value(a).numel();
                    let mut s = g[0];
                    if matches!(node.op, Op::Mean { .. }) {
                        s /= T::from_usize(len.max(1)).unwrap();
                    }
                    let ga = acc(&mut grads[a.0], len);
                    ga.iter_mut().for_each(|d| *d += s);
                }
            }
            &Op::SumLast { a } => {
                if self.wants(a) {
                    let w = *self.shape(a).last().unwrap();
                    let ga = acc(&mut grads[a.0], self.value(a).numel());
                    for (dst, &gv) in ga.chunks_mut(w.max(1)).zip(g) {
                        dst.iter_mut().for_each(|d| *d += gv);
                    }
                }
            }
            Op::CrossEntropy { logits, targets, count } => {
                if self.wants(*logits) && *count > 0 {
                    let v = self.shape(*logits)[1];
                    let scale = g[0] / T::from_usize(*count).unwrap();
                    let ld = self.value(*logits).data();
                    let gl = acc(&mut grads[logits.0], ld.len());
                    for ((row, dst), t) in ld.chunks(v).zip(gl.chunks_mut(v)).zip(targets) {
                        let Some(t) = *t else { continue };
                        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
                        let z: T = row.iter().map(|&x| (x - mx).exp()).sum();
                        for j in 0..v {
                            let p = (row[j] - mx).exp() / z;
                            let onehot = if j == t { T::one() } else { T::zero() };
                            dst[j] += scale * (p - onehot);
                        }
                    }
                }
            }
            &Op::L2Distance { a, b } => {
                let w = *self.shape(a).last().unwrap();
                let ad = self.value(a).data();
                let bd = self.value(b).data();
                let mut dir = vec![T::zero(); ad.len()];
                for (r, &d) in out.data().iter().enumerate() {
                    if d > T::zero() {
                        let k = g[r] / d;
                        for i in r * w..(r + 1) * w {
                            dir[i] = k * (ad[i] - bd[i]);
                        }
                    }
                }
                if self.wants(a) {
                    let ga = acc(&mut grads[a.0], ad.len());
                    ga.iter_mut().zip(&dir).for_each(|(d, &v)| *d += v);
                }
                if self.wants(b) {
                    let gb = acc(&mut grads[b.0], bd.len());
                    gb.iter_mut().zip(&dir).for_each(|(d, &v)| *d -= v);
                }
            }
        }
    }

    fn backprop_binary(
        &self,
        kind: BinaryKind,
        a: Var,
        b: Var,
        out_shape: &[usize],
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let sa = self.shape(a);
        let sb = self.shape(b);
        debug_assert_eq!(broadcast_shape(sa, sb).as_deref(), Some(out_shape));
        let acc_a = Access::new(sa, out_shape);
        let acc_b = Access::new(sb, out_shape);
        let av = self.value(a).data();
        let bv = self.value(b).data();
        if self.wants(a) {
            let ga = acc(&mut grads[a.0], av.len());
            match kind {
                BinaryKind::Add | BinaryKind::Sub => {
                    for_each_broadcast(out_shape, &acc_a, &acc_b, |o, i, _| ga[i] += g[o])
                }
                BinaryKind::Mul => for_each_broadcast(out_shape, &acc_a, &acc_b, |o, i, j| ga[i] += g[o] * bv[j]),
                BinaryKind::Div => for_each_broadcast(out_shape, &acc_a, &acc_b, |o, i, j| ga[i] += g[o] / bv[j]),
            }
        }
        if self.wants(b) {
            let gb = acc(&mut grads[b.0], bv.len());
            match kind {
                BinaryKind::Add => for_each_broadcast(out_shape, &acc_a, &acc_b, |o, _, j| gb[j] += g[o]),
                BinaryKind::Sub => for_each_broadcast(out_shape, &acc_a, &acc_b, |o, _, j| gb[j] -= g[o]),
                BinaryKind::Mul => for_each_broadcast(out_shape, &acc_a, &acc_b, |o, i, j| gb[j] += g[o] * av[i]),
                BinaryKind::Div => for_each_broadcast(out_shape, &acc_a, &acc_b, |o, i, j| {
                    gb[j] -= g[o] * av[i] / (bv[j] * bv[j])
                }),
            }
        }
    }
}

fn unary_backward<T: Float>(kind: UnaryKind, x: &[T], y: &[T], g: &[T], ga: &mut [T]) {
    let one = T::one();
    let half = T::from_f64_lossy(0.5);
    let it = ga.iter_mut().zip(g).zip(x.iter().zip(y));
    match kind {
        UnaryKind::Gelu => {
            let c = T::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt());
            let k = T::from_f64_lossy(0.044715);
            let three = T::from_f64_lossy(3.0);
            for ((d, &gv), (&xv, _)) in it {
                let u = c * (xv + k * xv * xv * xv);
                let t = fast_tanh(u);
                let du = c * (one + three * k * xv * xv);
                *d += gv * (half * (one + t) + half * xv * (one - t * t) * du);
            }
        }
        UnaryKind::Tanh => it.for_each(|((d, &gv), (_, &yv))| *d += gv * (one - yv * yv)),
        UnaryKind::Exp => it.for_each(|((d, &gv), (_, &yv))| *d += gv * yv),
        UnaryKind::Log => it.for_each(|((d, &gv), (&xv, _))| *d += gv / xv),
        UnaryKind::Sqrt => it.for_each(|((d, &gv), (_, &yv))| *d += gv * half / yv),
        UnaryKind::Softplus => it.for_each(|((d, &gv), (&xv, _))| *d += gv / (one + (-xv).exp())),
        UnaryKind::Square => it.for_each(|((d, &gv), (&xv, _))| *d += gv * (xv + xv)),
    }
}
