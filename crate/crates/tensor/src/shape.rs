//! Shape utilities: numpy-style broadcasting and strided index walks.

use crate::tensor::numel;

/// Row-major contiguous strides.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![0; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        s[i] = acc;
        acc *= shape[i];
    }
    s
}

/// Broadcast result shape of two operands, right-aligned.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` when read as broadcast into `out` (0 on broadcast axes).
pub(crate) fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let own = strides(shape);
    let mut s = vec![0; rank];
    for i in 0..shape.len() {
        let oi = i + rank - shape.len();
        s[oi] = if shape[i] == 1 && out[oi] != 1 { 0 } else { own[i] };
    }
    s
}

/// How a broadcast operand maps onto the output index space.
#[derive(Clone, Debug)]
pub(crate) enum Access {
    /// Same element count and layout as the output.
    Identity,
    /// Operand equals the trailing dims of the output: index = out % len.
    Suffix(usize),
    /// General strided access.
    Strided(Vec<usize>),
}

impl Access {
    pub(crate) fn new(shape: &[usize], out: &[usize]) -> Access {
        let n = numel(shape);
        if n == numel(out) {
            return Access::Identity;
        }
        let k = shape.len();
        let trimmed: Vec<usize> = {
            let first = shape.iter().position(|&d| d != 1).unwrap_or(k);
            shape[first..].to_vec()
        };
        if trimmed.len() <= out.len() && out[out.len() - trimmed.len()..] == trimmed[..] {
            return Access::Suffix(n.max(1));
        }
        Access::Strided(broadcast_strides(shape, out))
    }
}

/// Call `f(out_index, a_index, b_index)` for every element of `out`.
pub(crate) fn for_each_broadcast(
    out: &[usize],
    a: &Access,
    b: &Access,
    mut f: impl FnMut(usize, usize, usize),
) {
    let n = numel(out);
    match (a, b) {
        (Access::Identity, Access::Identity) => (0..n).for_each(|i| f(i, i, i)),
        (Access::Identity, Access::Suffix(m)) => {
            for base in (0..n).step_by(*m) {
                (0..*m).for_each(|j| f(base + j, base + j, j));
            }
        }
        (Access::Suffix(m), Access::Identity) => {
            for base in (0..n).step_by(*m) {
                (0..*m).for_each(|j| f(base + j, j, base + j));
            }
        }
        _ => {
            let sa = materialize(a, out);
            let sb = materialize(b, out);
            walk(out, &[&sa, &sb], |i, offs| f(i, offs[0], offs[1]));
        }
    }
}

fn materialize(acc: &Access, out: &[usize]) -> Vec<usize> {
    match acc {
        Access::Identity => strides(out),
        Access::Suffix(m) => {
            // Suffix access equals contiguous strides with leading axes zeroed.
            let st = strides(out);
            let mut covered = 1;
            st.iter()
                .zip(out)
                .rev()
                .map(|(&s, &d)| {
                    let keep = covered < *m;
                    covered *= d;
                    if keep {
                        s
                    } else {
                        0
                    }
                })
                .collect::<Vec<_>>()
                .into_iter()
                .rev()
                .collect()
        }
        Access::Strided(s) => s.clone(),
    }
}

/// Walk every multi-index of `shape` in row-major order, tracking one offset per
/// stride vector.
pub(crate) fn walk<const K: usize>(
    shape: &[usize],
    stride_sets: &[&Vec<usize>; K],
    mut f: impl FnMut(usize, [usize; K]),
) {
    let n = numel(shape);
    if n == 0 {
        return;
    }
    let rank = shape.len();
    if rank == 0 {
        f(0, [0; K]);
        return;
    }
    let inner = shape[rank - 1];
    let inner_step: [usize; K] = std::array::from_fn(|k| stride_sets[k][rank - 1]);
    let mut idx = vec![0usize; rank - 1];
    let mut offs = [0usize; K];
    let mut flat = 0;
    loop {
        let mut o = offs;
        for _ in 0..inner {
            f(flat, o);
            flat += 1;
            for k in 0..K {
                o[k] += inner_step[k];
            }
        }
        // advance the outer multi-index
        let mut d = rank - 1;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            for k in 0..K {
                offs[k] += stride_sets[k][d];
            }
            if idx[d] < shape[d] {
                break;
            }
            for k in 0..K {
                offs[k] -= stride_sets[k][d] * shape[d];
            }
            idx[d] = 0;
        }
    }
}
