//! Noisy linear-regression sequences `(x_1, y_1, ..., x_N, y_N)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{CgtError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LinRegSpec {
    pub d_in: usize,
    pub d_out: usize,
    pub n_pairs: usize,
    pub noise: f64,
}

impl Default for LinRegSpec {
    fn default() -> Self {
        LinRegSpec { d_in: 16, d_out: 1, n_pairs: 40, noise: 0.1 }
    }
}

impl LinRegSpec {
    pub fn seq_len(&self) -> usize {
        2 * self.n_pairs
    }

    /// Width of the zero-padded input vectors.
    pub fn width(&self) -> usize {
        self.d_in.max(self.d_out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d_out == 0 || self.n_pairs == 0 || !(self.noise >= 0.0) {
            return Err(CgtError::Data(format!("invalid linreg spec {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinRegSequence {
    /// Row-major `[d_out, d_in]`.
    pub u: Vec<f64>,
    pub b: Vec<f64>,
    pub xs: Vec<Vec<f64>>,
    /// Noisy targets `U x + b + eps q`.
    pub ys: Vec<Vec<f64>>,
    /// Noise-free `U x + b`.
    pub clean: Vec<Vec<f64>>,
}

fn normals<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn apply_affine(u: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let d_in = x.len();
    b.iter().enumerate().map(|(o, &bo)| bo + u[o * d_in..(o + 1) * d_in].iter().zip(x).map(|(w, v)| w * v).sum::<f64>()).collect()
}

pub fn generate<R: Rng + ?Sized>(spec: &LinRegSpec, rng: &mut R) -> LinRegSequence {
    let u = normals(rng, spec.d_out * spec.d_in);
    let b = normals(rng, spec.d_out);
    let mut xs = Vec::with_capacity(spec.n_pairs);
    let mut ys = Vec::with_capacity(spec.n_pairs);
    let mut clean = Vec::with_capacity(spec.n_pairs);
    for _ in 0..spec.n_pairs {
        let x = normals(rng, spec.d_in);
        let c = apply_affine(&u, &b, &x);
        let q = normals(rng, spec.d_out);
        ys.push(c.iter().zip(&q).map(|(c, q)| c + spec.noise * q).collect());
        clean.push(c);
        xs.push(x);
    }
    LinRegSequence { u, b, xs, ys, clean }
}

impl LinRegSequence {
    /// Interleaved inputs, each zero-padded to `width`.
    pub fn inputs(&self, width: usize) -> Vec<Vec<f64>> {
        let pad = |v: &[f64]| {
            let mut p = v.to_vec();
            p.resize(width, 0.0);
            p
        };
        self.xs.iter().zip(&self.ys).flat_map(|(x, y)| [pad(x), pad(y)]).collect()
    }
}

/// Ridge penalty of the reference fit: noise variance over the unit prior
/// variance of the weights at the default noise level.
pub const RIDGE_LAMBDA: f64 = 0.01;

/// Closed-form ridge fit of `y ≈ W x + c` on the given pairs; returns a
/// predictor. The bias column is penalized like the weights.
pub struct Ridge {
    /// `[d_in + 1, d_out]`, last row is the bias.
    coef: DMatrix<f64>,
}

impl Ridge {
    pub fn fit(xs: &[Vec<f64>], ys: &[Vec<f64>], lambda: f64) -> Ridge {
        let d_in = xs.first().map_or(0, Vec::len);
        let d_out = ys.first().map_or(0, Vec::len);
        let k = xs.len();
        let x = DMatrix::from_fn(k, d_in + 1, |i, j| if j < d_in { xs[i][j] } else { 1.0 });
        let y = DMatrix::from_fn(k, d_out, |i, j| ys[i][j]);
        let gram = x.transpose() * &x + DMatrix::identity(d_in + 1, d_in + 1) * lambda;
        let rhs = x.transpose() * y;
        let coef = gram.cholesky().expect("ridge gram matrix is positive definite").solve(&rhs);
        Ridge { coef }
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut v = x.to_vec();
        v.push(1.0);
        (self.coef.transpose() * DVector::from_vec(v)).iter().copied().collect()
    }
}

pub fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Mean L2 error against the noise-free targets of pairs `eval`, for a ridge
/// fit on the first `k` pairs.
pub fn ridge_error(seq: &LinRegSequence, k: usize, eval: std::ops::Range<usize>, lambda: f64) -> f64 {
    let ridge = Ridge::fit(&seq.xs[..k], &seq.ys[..k], lambda);
    let n = eval.len() as f64;
    eval.map(|i| l2(&ridge.predict(&seq.xs[i]), &seq.clean[i])).sum::<f64>() / n
}
