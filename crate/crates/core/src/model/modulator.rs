//! Low-rank operators `T(x) = x + L(y)·R(y)ᵀ·[x; 1]` generated from a template
//! bank mixed by `σ = h(S·[y; 1])`.

use cgt_tensor::{Float, Graph, Var};

use crate::config::Mixing;
use crate::error::Result;

/// Mixing coefficients for `y[.., d_y]` against `s[M, d_y + 1]`, shape `[.., M]`.
pub fn mixing<T: Float>(g: &mut Graph<T>, y: Var, s: Var, h: Mixing) -> Result<Var> {
    let mut shape = g.shape(y).to_vec();
    *shape.last_mut().expect("y has a feature axis") = 1;
    let one = g.constant(cgt_tensor::Tensor::ones(&shape));
    let y1 = g.concat(&[y, one], shape.len() - 1)?;
    let st = g.transpose(s)?;
    let z = g.matmul(y1, st)?;
    Ok(match h {
        Mixing::Tanh => g.tanh(z),
        Mixing::Softmax => g.softmax(z, false)?,
    })
}

/// Apply the operator generated by `sigma[B, n, M]` to `x[B, n, d]` using
/// templates `l[M, d, r]` and `r[M, d + 1, r]`.
pub fn apply<T: Float>(g: &mut Graph<T>, x: Var, sigma: Var, l: Var, r: Var) -> Result<Var> {
    let xs = g.shape(x).to_vec();
    let (b, n, d) = (xs[0], xs[1], xs[2]);
    let ls = g.shape(l).to_vec();
    let (m, rank) = (ls[0], ls[2]);
    let rows = b * n;

    let one = g.constant(cgt_tensor::Tensor::ones(&[b, n, 1]));
    let x1 = g.concat(&[x, one], 2)?;
    let x1 = g.reshape(x1, &[rows, d + 1])?;
    // [d+1, M·r] with column block m holding R_m
    let rcat = g.permute(r, &[1, 0, 2])?;
    let rcat = g.reshape(rcat, &[d + 1, m * rank])?;
    let p = g.matmul(x1, rcat)?;
    let p = g.reshape(p, &[rows, m, rank])?;
    let sig = g.reshape(sigma, &[rows, m, 1])?;
    // u = Σ_m σ_m R_mᵀ[x;1]
    let weighted = g.mul(sig, p)?;
    let weighted = g.permute(weighted, &[0, 2, 1])?;
    let u = g.sum_last(weighted)?;
    let u = g.reshape(u, &[rows, 1, rank])?;
    // δ = Σ_m σ_m L_m u
    let q = g.mul(sig, u)?;
    let q = g.reshape(q, &[rows, m * rank])?;
    let lcat = g.permute(l, &[0, 2, 1])?;
    let lcat = g.reshape(lcat, &[m * rank, d])?;
    let delta = g.matmul(q, lcat)?;
    let delta = g.reshape(delta, &[b, n, d])?;
    Ok(g.add(x, delta)?)
}

/// Generated factors for one context vector, computed directly in f64:
/// `L` row-major `[d, r]` and `R` row-major `[d + 1, r]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Factors {
    pub d: usize,
    pub rank: usize,
    pub sigma: Vec<f64>,
    pub l: Vec<f64>,
    pub r: Vec<f64>,
}

/// `σ = h(S·[y; 1])` for a single vector; `s` row-major `[M, d_y + 1]`.
pub fn mixing_f64(s: &[f64], y: &[f64], h: Mixing) -> Vec<f64> {
    let w = y.len() + 1;
    let z: Vec<f64> = s
        .chunks(w)
        .map(|row| row[..y.len()].iter().zip(y).map(|(a, b)| a * b).sum::<f64>() + row[y.len()])
        .collect();
    match h {
        Mixing::Tanh => z.iter().map(|v| v.tanh()).collect(),
        Mixing::Softmax => {
            let mx = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - mx).exp()).collect();
            let tot: f64 = e.iter().sum();
            e.iter().map(|v| v / tot).collect()
        }
    }
}

impl Factors {
    /// Mix templates `l[M, d, r]`, `r[M, d + 1, r]` with coefficients `sigma`.
    pub fn mix(sigma: Vec<f64>, l: &[f64], r: &[f64], d: usize, rank: usize) -> Factors {
        let mut lm = vec![0.0; d * rank];
        let mut rm = vec![0.0; (d + 1) * rank];
        for (m, &s) in sigma.iter().enumerate() {
            let lt = &l[m * d * rank..(m + 1) * d * rank];
            let rt = &r[m * (d + 1) * rank..(m + 1) * (d + 1) * rank];
            lm.iter_mut().zip(lt).for_each(|(a, b)| *a += s * b);
            rm.iter_mut().zip(rt).for_each(|(a, b)| *a += s * b);
        }
        Factors { d, rank, sigma, l: lm, r: rm }
    }

    /// Dense `δW[i, j] = Σ_k L[i, k]·R[j, k]`, row-major `[d, d + 1]`.
    pub fn dense(&self) -> Vec<f64> {
        let (d, r) = (self.d, self.rank);
        let mut w = vec![0.0; d * (d + 1)];
        for i in 0..d {
            for j in 0..=d {
                w[i * (d + 1) + j] = (0..r).map(|k| self.l[i * r + k] * self.r[j * r + k]).sum();
            }
        }
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cgt_tensor::{stream_rng, Stream, Tensor};

    #[test]
    fn rank_one_outer_product() {
        // L = e_0, R = e_2: x̃ = x + x_2·e_0
        let (d, m, r) = (3, 1, 1);
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64(&[1, 1, d], &[1.0, 2.0, 5.0]).unwrap());
        let sig = g.constant(Tensor::ones(&[1, 1, m]));
        let l = g.constant(Tensor::from_f64(&[m, d, r], &[1.0, 0.0, 0.0]).unwrap());
        let rr = g.constant(Tensor::from_f64(&[m, d + 1, r], &[0.0, 0.0, 1.0, 0.0]).unwrap());
        let out = apply(&mut g, x, sig, l, rr).unwrap();
        assert_eq!(g.value(out).data(), &[6.0, 2.0, 5.0]);
    }

    #[test]
    fn matches_dense_materialization() {
        let mut rng = stream_rng(0, Stream::Oracle, 0);
        let (b, n, d, m, r, dy) = (2, 3, 5, 4, 2, 3);
        let xt = Tensor::<f64>::randn(&[b, n, d], 1.0, &mut rng);
        let yt = Tensor::<f64>::randn(&[b, n, dy], 1.0, &mut rng);
        let lt = Tensor::<f64>::randn(&[m, d, r], 1.0, &mut rng);
        let rt = Tensor::<f64>::randn(&[m, d + 1, r], 1.0, &mut rng);
        let st = Tensor::<f64>::randn(&[m, dy + 1], 1.0, &mut rng);
        for h in [Mixing::Tanh, Mixing::Softmax] {
            let mut g = Graph::new();
            let (x, y, l, rr, s) =
                (g.constant(xt.clone()), g.constant(yt.clone()), g.constant(lt.clone()), g.constant(rt.clone()), g.constant(st.clone()));
            let sig = mixing(&mut g, y, s, h).unwrap();
            let out = apply(&mut g, x, sig, l, rr).unwrap();
            for pos in 0..b * n {
                let f = Factors::mix(mixing_f64(st.data(), yt.row(pos), h), lt.data(), rt.data(), d, r);
                let w = f.dense();
                let xv = xt.row(pos);
                for i in 0..d {
                    let want = xv[i] + (0..d).map(|j| w[i * (d + 1) + j] * xv[j]).sum::<f64>() + w[i * (d + 1) + d];
                    assert!((g.value(out).row(pos)[i] - want).abs() < 1e-10);
                }
            }
        }
    }
}
