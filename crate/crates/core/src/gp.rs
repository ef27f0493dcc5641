//! Gaussian-process priors over the context trace: kernels, Cholesky-based
//! inverses, prior sampling and the running-mean Monte-Carlo oracle.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{CgtError, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum KernelSpec {
    /// `nu·I + (1 − nu)·exp(−(i−j)²/2λ²)` with `λ = lambda_frac·n`.
    RbfMix { nu: f64, lambda_frac: f64 },
    /// `1 + ε²·min(s,t)/(s·t)`, 1-based positions.
    FewShot { epsilon: f64 },
    /// Row-major `n × n` matrix.
    Custom(Vec<f64>),
}

/// Covariance `K`, its lower Cholesky factor and inverse, all row-major `n × n`.
#[derive(Clone, Debug)]
pub struct KernelMatrix {
    pub n: usize,
    pub k: Vec<f64>,
    pub chol: Vec<f64>,
    pub inv: Vec<f64>,
}

/// Lower-triangular `C` with `C·Cᵀ = a`.
pub fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    assert_eq!(a.len(), n * n);
    let mut c = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= c[j * n + k] * c[j * n + k];
        }
        if !(d > 0.0) {
            return Err(CgtError::NotPositiveDefinite { pivot: j, value: d });
        }
        let djj = d.sqrt();
        c[j * n + j] = djj;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= c[i * n + k] * c[j * n + k];
            }
            c[i * n + j] = s / djj;
        }
    }
    Ok(c)
}

/// Inverse of `C·Cᵀ` from its lower factor.
fn chol_inverse(c: &[f64], n: usize) -> Vec<f64> {
    // W = C⁻¹ by forward substitution, then K⁻¹ = Wᵀ·W.
    let mut w = vec![0.0; n * n];
    for col in 0..n {
        for i in col..n {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in col..i {
                s -= c[i * n + k] * w[k * n + col];
            }
            w[i * n + col] = s / c[i * n + i];
        }
    }
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (i..n).map(|k| w[k * n + i] * w[k * n + j]).sum();
            inv[i * n + j] = s;
            inv[j * n + i] = s;
        }
    }
    inv
}

/// Few-shot covariance at 1-based positions `s`, `t`.
pub fn fewshot_entry(epsilon: f64, s: usize, t: usize) -> f64 {
    let (s, t) = (s as f64, t as f64);
    1.0 + epsilon * epsilon * s.min(t) / (s * t)
}

pub fn kernel_values(spec: &KernelSpec, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(CgtError::KernelSize { got: 0, expected: 1 });
    }
    let k = match spec {
        KernelSpec::RbfMix { nu, lambda_frac } => {
            if !(*nu > 0.0 && *nu <= 1.0 && *lambda_frac > 0.0) {
                return Err(CgtError::config("vae.nu", format!("need 0 < nu <= 1 and lambda_frac > 0 (got {nu}, {lambda_frac})")));
            }
            let lambda = lambda_frac * n as f64;
            let mut k = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    let d = i as f64 - j as f64;
                    k[i * n + j] = (1.0 - nu) * (-d * d / (2.0 * lambda * lambda)).exp() + if i == j { *nu } else { 0.0 };
                }
            }
            k
        }
        KernelSpec::FewShot { epsilon } => {
            let mut k = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    k[i * n + j] = fewshot_entry(*epsilon, i + 1, j + 1);
                }
            }
            k
        }
        KernelSpec::Custom(m) => {
            if m.len() != n * n {
                return Err(CgtError::KernelSize { got: m.len(), expected: n * n });
            }
            m.clone()
        }
    };
    Ok(k)
}

pub fn build_kernel(spec: &KernelSpec, n: usize) -> Result<KernelMatrix> {
    let k = kernel_values(spec, n)?;
    for i in 0..n {
        for j in 0..i {
            if k[i * n + j] != k[j * n + i] {
                return Err(CgtError::Model(format!("kernel is not symmetric at ({i}, {j})")));
            }
        }
    }
    let chol = cholesky(&k, n)?;
    let inv = chol_inverse(&chol, n);
    Ok(KernelMatrix { n, k, chol, inv })
}

impl KernelMatrix {
    pub fn at(&self, s: usize, t: usize) -> f64 {
        self.k[s * self.n + t]
    }

    pub fn log_det(&self) -> f64 {
        (0..self.n).map(|i| 2.0 * self.chol[i * self.n + i].ln()).sum()
    }

    /// `dims` independent prior draws, each of length `n`: `C·ε`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, dims: usize) -> Vec<Vec<f64>> {
        let n = self.n;
        (0..dims)
            .map(|_| {
                let eps: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                (0..n).map(|i| (0..=i).map(|k| self.chol[i * n + k] * eps[k]).sum()).collect()
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_matrix_csv(path, &self.k, self.n)
    }
}

pub(crate) fn write_matrix_csv(path: &Path, m: &[f64], n: usize) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| CgtError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let header: Vec<String> = (0..n).map(|j| format!("c{j}")).collect();
    writeln!(w, "{}", header.join(",")).map_err(|e| CgtError::io(path, e))?;
    for i in 0..n {
        let row: Vec<String> = m[i * n..(i + 1) * n].iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{}", row.join(",")).map_err(|e| CgtError::io(path, e))?;
    }
    w.flush().map_err(|e| CgtError::io(path, e))
}

/// Empirical second moments of running-mean estimates with standard errors.
#[derive(Clone, Debug)]
pub struct McCovariance {
    pub n: usize,
    /// `⟨α̂_s α̂_t⟩`, row-major.
    pub cov: Vec<f64>,
    pub se: Vec<f64>,
    /// `⟨α̂_s⟩` and its standard error.
    pub mean: Vec<f64>,
    pub mean_se: Vec<f64>,
}

/// Draw `α ~ N(0,1)`, observe `ρ_s = α + ε·β_s`, track `α̂_s = mean(ρ_1..ρ_s)`.
pub fn mc_covariance_oracle<R: Rng + ?Sized>(epsilon: f64, n: usize, draws: usize, rng: &mut R) -> McCovariance {
    let mut sum = vec![0.0; n * n];
    let mut sum2 = vec![0.0; n * n];
    let mut m1 = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    let mut est = vec![0.0; n];
    for _ in 0..draws {
        let alpha: f64 = rng.sample(StandardNormal);
        let mut acc = 0.0;
        for (s, e) in est.iter_mut().enumerate() {
            let beta: f64 = rng.sample(StandardNormal);
            acc += alpha + epsilon * beta;
            *e = acc / (s + 1) as f64;
        }
        for s in 0..n {
            m1[s] += est[s];
            m2[s] += est[s] * est[s];
            for t in 0..n {
                let p = est[s] * est[t];
                sum[s * n + t] += p;
                sum2[s * n + t] += p * p;
            }
        }
    }
    let d = draws as f64;
    let se_of = |s1: f64, s2: f64| {
        let mean = s1 / d;
        ((s2 / d - mean * mean).max(0.0) / (d - 1.0)).sqrt()
    };
    McCovariance {
        n,
        cov: sum.iter().map(|v| v / d).collect(),
        se: sum.iter().zip(&sum2).map(|(&a, &b)| se_of(a, b)).collect(),
        mean: m1.iter().map(|v| v / d).collect(),
        mean_se: m1.iter().zip(&m2).map(|(&a, &b)| se_of(a, b)).collect(),
    }
}
