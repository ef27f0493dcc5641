//! Training losses: next-token cross-entropy (or MSE for continuous inputs),
//! the auxiliary frozen-context loss, element-wise regularizers on the
//! normalized context trace, the variational KL term against a GP prior and
//! the distribution-matching regularizers.

use cgt_tensor::{Float, Graph, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{InputMode, LossConfig, Zeta};
use crate::datasets::Sample;
use crate::error::{CgtError, Result};
use crate::gp::KernelMatrix;
use crate::model::{Cgt, Context, ForwardOpts, Input, VaeNoise};

/// Guard added under the square root when normalizing context vectors.
pub const NORM_EPS: f64 = 1e-12;

/// A training batch.
#[derive(Clone, Debug)]
pub enum Batch<T> {
    Tokens(Vec<Vec<usize>>),
    /// `inputs[B, 2N, w]` interleaving `x_k, y_k`; `targets[b][k]` is `y_k`.
    Regression { inputs: Tensor<T>, targets: Vec<Vec<Vec<f64>>> },
}

impl<T: Float> Batch<T> {
    pub fn from_samples(samples: &[Sample]) -> Result<Batch<T>> {
        if let Some(first) = samples.first().and_then(Sample::as_linreg) {
            let width = first.xs[0].len().max(first.ys[0].len());
            let n = 2 * first.xs.len();
            let mut data = Vec::with_capacity(samples.len() * n * width);
            let mut targets = Vec::with_capacity(samples.len());
            for s in samples {
                let s = s.as_linreg().ok_or_else(|| CgtError::Data("mixed batch".into()))?;
                data.extend(s.inputs(width).into_iter().flatten());
                targets.push(s.ys.clone());
            }
            let inputs = Tensor::from_f64(&[samples.len(), n, width], &data)?;
            return Ok(Batch::Regression { inputs, targets });
        }
        let seqs = samples
            .iter()
            .map(|s| s.tokens().map(<[usize]>::to_vec).ok_or_else(|| CgtError::Data("mixed batch".into())))
            .collect::<Result<_>>()?;
        Ok(Batch::Tokens(seqs))
    }

    pub fn len(&self) -> usize {
        match self {
            Batch::Tokens(s) => s.len(),
            Batch::Regression { targets, .. } => targets.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn seq_len(&self) -> usize {
        match self {
            Batch::Tokens(s) => s.first().map_or(0, Vec::len),
            Batch::Regression { inputs, .. } => inputs.shape()[1],
        }
    }

    pub fn input(&self) -> Input<'_, T> {
        match self {
            Batch::Tokens(s) => Input::Tokens(s),
            Batch::Regression { inputs, .. } => Input::Vectors(inputs),
        }
    }
}

/// Next-token targets of `[B, n]` flattened row-major; the last position has none.
pub fn next_token_targets(seqs: &[Vec<usize>]) -> Vec<Option<usize>> {
    seqs.iter().flat_map(|s| (0..s.len()).map(move |t| s.get(t + 1).copied())).collect()
}

/// Mean next-token cross-entropy of `logits[B, n, V]`.
pub fn cross_entropy_loss<T: Float>(g: &mut Graph<T>, logits: Var, seqs: &[Vec<usize>]) -> Result<Var> {
    let targets = next_token_targets(seqs);
    let v = *g.shape(logits).last().expect("logits have a vocab axis");
    let flat = g.reshape(logits, &[targets.len(), v])?;
    Ok(g.cross_entropy(flat, &targets)?)
}

/// Mean squared L2 error of `out[B, 2N, d_out]` at x positions (even
/// indices) against `targets[b][k]`. `first_pair[b]` is the pair index of
/// position 0 and `len[b]` the number of pairs counted.
pub fn regression_loss<T: Float>(
    g: &mut Graph<T>,
    out: Var,
    targets: &[Vec<Vec<f64>>],
    first_pair: &[usize],
    len: &[usize],
) -> Result<Var> {
    let s = g.shape(out).to_vec();
    let (b, n, d) = (s[0], s[1], s[2]);
    let mut rows = Vec::new();
    let mut want = Vec::new();
    for bi in 0..b {
        for k in 0..len[bi] {
            rows.push(bi * n + 2 * k);
            want.extend_from_slice(&targets[bi][first_pair[bi] + k]);
        }
    }
    let flat = g.reshape(out, &[b * n, d])?;
    let picked = g.index_select(flat, 0, &rows)?;
    let tgt = g.constant(Tensor::from_f64(&[rows.len(), d], &want)?);
    let diff = g.sub(picked, tgt)?;
    let sq = g.square(diff);
    let per = g.sum_last(sq)?;
    Ok(g.mean(per))
}

/// ζ at the 1-based positions `positions`, scaled to mean 1 over them.
pub fn zeta_weights(zeta: Zeta, positions: std::ops::RangeInclusive<usize>) -> Vec<f64> {
    let pos: Vec<usize> = positions.collect();
    let count = pos.len();
    let raw: Vec<f64> = pos
        .iter()
        .enumerate()
        .map(|(i, &s)| match zeta {
            Zeta::Constant => 1.0,
            Zeta::Linear => s as f64,
            Zeta::Quadratic => (s * s) as f64,
            Zeta::LastK(k) => {
                if i + k >= count {
                    1.0
                } else {
                    0.0
                }
            }
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v * count as f64 / total).collect()
}

/// Unit-normalize the last axis: `y / sqrt(‖y‖² + ε²)`.
pub fn normalize<T: Float>(g: &mut Graph<T>, y: Var) -> Result<Var> {
    let sq = g.square(y);
    let ss = g.sum_last(sq)?;
    let ss = g.add_scalar(ss, NORM_EPS * NORM_EPS);
    let norm = g.sqrt(ss);
    let mut shape = g.shape(norm).to_vec();
    shape.push(1);
    let norm = g.reshape(norm, &shape)?;
    Ok(g.div(y, norm)?)
}

/// Continuity regularizer on `y[B, n, d]`: `Σ_{s≥2} ζ(s)·‖n_s − n_{s−1}‖²`,
/// averaged over the batch.
pub fn reg_continuity<T: Float>(g: &mut Graph<T>, y: Var, zeta: Zeta) -> Result<Var> {
    let s = g.shape(y).to_vec();
    let (b, n) = (s[0], s[1]);
    if n < 2 {
        return Ok(g.constant(Tensor::scalar(T::zero())));
    }
    let nv = normalize(g, y)?;
    let later = g.slice(nv, 1, 1, n)?;
    let earlier = g.slice(nv, 1, 0, n - 1)?;
    let diff = g.sub(later, earlier)?;
    let sq = g.square(diff);
    let per = g.sum_last(sq)?;
    let w = g.constant(Tensor::from_f64(&[n - 1], &zeta_weights(zeta, 2..=n))?);
    let weighted = g.mul(per, w)?;
    let total = g.sum(weighted);
    Ok(g.scale(total, 1.0 / b as f64))
}

/// Orthogonality regularizer `Σ_{s,α,β} ζ(s)·(n_s^α·n_s^β − δ_αβ)²` over
/// ordered pairs, divided by `B(B−1)·n`. `None` for a batch of one.
pub fn reg_orthogonality<T: Float>(g: &mut Graph<T>, y: Var, zeta: Zeta) -> Result<Option<Var>> {
    let s = g.shape(y).to_vec();
    let (b, n) = (s[0], s[1]);
    if b < 2 {
        return Ok(None);
    }
    let nv = normalize(g, y)?;
    let by_pos = g.permute(nv, &[1, 0, 2])?;
    let gram = g.bmm(by_pos, by_pos, true)?;
    let eye = g.constant(Tensor::eye(b));
    let off = g.sub(gram, eye)?;
    let sq = g.square(off);
    let per_pos = g.reshape(sq, &[n, b * b])?;
    let per_pos = g.sum_last(per_pos)?;
    let w = g.constant(Tensor::from_f64(&[n], &zeta_weights(zeta, 1..=n))?);
    let weighted = g.mul(per_pos, w)?;
    let total = g.sum(weighted);
    Ok(Some(g.scale(total, 1.0 / (b * (b - 1) * n) as f64)))
}

/// `(β/2)·[μᵢᵀK⁻¹μᵢ + Σ_s K⁻¹_ss σ²_{i,s} − Σ_s log σ²_{i,s} − n]`, summed over
/// dimensions `i` and averaged over the batch. This is the exact Gaussian KL
/// against `N(0, K)` up to the constant `log det K`.
pub fn vae_kl_term<T: Float>(g: &mut Graph<T>, mu: Var, sigma: Var, k_inv: &[f64], beta: f64) -> Result<Var> {
    let s = g.shape(mu).to_vec();
    let (b, n, d) = (s[0], s[1], s[2]);
    if k_inv.len() != n * n {
        return Err(CgtError::KernelSize { got: k_inv.len(), expected: n * n });
    }
    let kinv = g.constant(Tensor::from_f64(&[n, n], k_inv)?);
    let mu_t = g.permute(mu, &[0, 2, 1])?;
    let proj = g.matmul(mu_t, kinv)?;
    let quad = g.mul(proj, mu_t)?;
    let quad = g.sum(quad);
    let diag: Vec<f64> = (0..n).map(|i| k_inv[i * n + i]).collect();
    let diag = g.constant(Tensor::from_f64(&[n, 1], &diag)?);
    let var = g.square(sigma);
    let tr = g.mul(var, diag)?;
    let tr = g.sum(tr);
    let logv = g.log(var);
    let logv = g.sum(logv);
    let inner = g.add(quad, tr)?;
    let inner = g.sub(inner, logv)?;
    let inner = g.add_scalar(inner, -((b * n * d) as f64));
    Ok(g.scale(inner, beta / (2.0 * b as f64)))
}

fn batch_mean<T: Float>(g: &mut Graph<T>, y: Var) -> Result<(Var, Var)> {
    let b = g.shape(y)[0];
    let last_b = g.permute(y, &[1, 2, 0])?;
    let sum = g.sum_last(last_b)?;
    let mean = g.scale(sum, 1.0 / b as f64);
    let centered = g.sub(y, mean)?;
    Ok((mean, centered))
}

/// Position/dimension tuples `(s, t, i, j)` for the sampled covariance term.
pub fn sample_tuples<R: Rng + ?Sized>(rng: &mut R, n: usize, d: usize, count: usize) -> Vec<(usize, usize, usize, usize)> {
    (0..count).map(|_| (rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..d), rng.random_range(0..d))).collect()
}

/// Distribution-matching regularizer on `y[B, n, d]`:
/// `(1/n)Σ_s‖μ̂_s‖² + (1/n²)·Σ_{s,t,i,j}(⟨Δy_{s,i}Δy_{t,j}⟩ − K_{st}δ_ij)²`,
/// with the second sum estimated from `tuples` and rescaled to the full
/// `n²d²` count.
pub fn reg_dist_match<T: Float>(g: &mut Graph<T>, y: Var, kernel: &KernelMatrix, tuples: &[(usize, usize, usize, usize)]) -> Result<Var> {
    let s = g.shape(y).to_vec();
    let (b, n, d) = (s[0], s[1], s[2]);
    if kernel.n != n {
        return Err(CgtError::KernelSize { got: kernel.n * kernel.n, expected: n * n });
    }
    let (mean, centered) = batch_mean(g, y)?;
    let msq = g.square(mean);
    let first = g.sum(msq);
    let first = g.scale(first, 1.0 / n as f64);
    if tuples.is_empty() {
        return Ok(first);
    }
    let flat = g.reshape(centered, &[b, n * d])?;
    let left: Vec<usize> = tuples.iter().map(|&(s, _, i, _)| s * d + i).collect();
    let right: Vec<usize> = tuples.iter().map(|&(_, t, _, j)| t * d + j).collect();
    let l = g.index_select(flat, 1, &left)?;
    let r = g.index_select(flat, 1, &right)?;
    let prod = g.mul(l, r)?;
    let prod = g.transpose(prod)?;
    let cov = g.sum_last(prod)?;
    let cov = g.scale(cov, 1.0 / b as f64);
    let target: Vec<f64> = tuples.iter().map(|&(s, t, i, j)| if i == j { kernel.at(s, t) } else { 0.0 }).collect();
    let target = g.constant(Tensor::from_f64(&[tuples.len()], &target)?);
    let dev = g.sub(cov, target)?;
    let dev = g.square(dev);
    let second = g.sum(dev);
    let scale = (d * d) as f64 / tuples.len() as f64;
    let second = g.scale(second, scale);
    Ok(g.add(first, second)?)
}

/// Same-position variant: `(1/n)Σ_s[‖⟨y_s⟩‖² + Σ_ij(⟨Δy_{s,i}Δy_{s,j}⟩ − δ_ij)²]`.
pub fn reg_dist_match_local<T: Float>(g: &mut Graph<T>, y: Var) -> Result<Var> {
    let s = g.shape(y).to_vec();
    let (b, n, d) = (s[0], s[1], s[2]);
    let (mean, centered) = batch_mean(g, y)?;
    let msq = g.square(mean);
    let first = g.sum(msq);
    let by_pos = g.permute(centered, &[1, 2, 0])?;
    let cov = g.bmm(by_pos, by_pos, true)?;
    let cov = g.scale(cov, 1.0 / b as f64);
    let eye = g.constant(Tensor::eye(d));
    let dev = g.sub(cov, eye)?;
    let dev = g.square(dev);
    let second = g.sum(dev);
    let total = g.add(first, second)?;
    Ok(g.scale(total, 1.0 / n as f64))
}

/// Split positions for the auxiliary loss: 1-based `s` uniform over
/// `3..=n−1`, or `3..=n−Δ` with a horizon. `None` when the range is empty.
pub fn sample_split<R: Rng + ?Sized>(rng: &mut R, n: usize, horizon: Option<usize>, step: usize) -> Option<usize> {
    let hi = match horizon {
        Some(h) => n.checked_sub(h)?,
        None => n.checked_sub(1)?,
    };
    let choices: Vec<usize> = (3..=hi).filter(|s| (s - 1) % step == 0).collect();
    if choices.is_empty() {
        return None;
    }
    Some(choices[rng.random_range(0..choices.len())])
}

/// Auxiliary loss: the suffix starting at token `s` (1-based) is run with the
/// context frozen at `y_{s−1}` taken from `y[B, n, d_y]` of the full run, in
/// the same graph so gradients reach the context pathway.
pub struct AuxOut {
    pub loss: Option<Var>,
    /// Sequences too short to split.
    pub skipped: usize,
    pub splits: Vec<usize>,
}

pub fn auxiliary_loss<T: Float, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    model: &Cgt<T>,
    batch: &Batch<T>,
    y: Var,
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<AuxOut> {
    let n = batch.seq_len();
    let bsz = batch.len();
    // continuous inputs split only at x positions
    let step = if matches!(batch, Batch::Regression { .. }) { 2 } else { 1 };
    let mut rows = Vec::new();
    let mut splits = Vec::new();
    let mut skipped = 0;
    for b in 0..bsz {
        for _ in 0..cfg.aux_samples {
            match sample_split(rng, n, cfg.horizon, step) {
                Some(s) => {
                    rows.push(b);
                    splits.push(s);
                }
                None => skipped += 1,
            }
        }
    }
    let loss = if splits.is_empty() {
        None
    } else {
        Some(aux_with_splits(g, model, batch, y, &rows, &splits, cfg.horizon, cfg.rebase_positions)?)
    };
    Ok(AuxOut { loss, skipped, splits })
}

/// Auxiliary loss for explicit `(row, s)` pairs.
#[allow(clippy::too_many_arguments)]
pub fn aux_with_splits<T: Float>(
    g: &mut Graph<T>,
    model: &Cgt<T>,
    batch: &Batch<T>,
    y: Var,
    rows: &[usize],
    splits: &[usize],
    horizon: Option<usize>,
    rebase: bool,
) -> Result<Var> {
    let n = batch.seq_len();
    let dy = model.cfg.dim_y;
    let starts: Vec<usize> = splits.iter().map(|s| s - 1).collect();
    let lens: Vec<usize> = starts.iter().map(|&st| horizon.map_or(n - st, |h| (h + 1).min(n - st))).collect();
    let width = *lens.iter().max().expect("at least one split");
    let flat_y = g.reshape(y, &[batch.len() * n, dy])?;
    let pick: Vec<usize> = rows.iter().zip(&starts).map(|(&b, &st)| b * n + st - 1).collect();
    let frozen = g.index_select(flat_y, 0, &pick)?;
    let offsets: Vec<usize> = if rebase { vec![0; rows.len()] } else { starts.clone() };
    let opts = ForwardOpts { context: Context::Constant(frozen), pos_offsets: Some(offsets), vae_noise: VaeNoise::Zero };
    match batch {
        Batch::Tokens(seqs) => {
            let mut suffix = Vec::with_capacity(rows.len());
            let mut targets = Vec::with_capacity(rows.len() * width);
            for ((&b, &st), &len) in rows.iter().zip(&starts).zip(&lens) {
                let mut s = seqs[b][st..st + len].to_vec();
                targets.extend((0..width).map(|t| if t + 1 < len { Some(s[t + 1]) } else { None }));
                s.resize(width, 0);
                suffix.push(s);
            }
            let out = model.forward(g, Input::Tokens(&suffix), opts)?;
            let v = *g.shape(out.output).last().expect("vocab axis");
            let flat = g.reshape(out.output, &[rows.len() * width, v])?;
            Ok(g.cross_entropy(flat, &targets)?)
        }
        Batch::Regression { inputs, targets } => {
            let w = inputs.shape()[2];
            let src = inputs.data();
            let mut data = vec![T::zero(); rows.len() * width * w];
            for (r, ((&b, &st), &len)) in rows.iter().zip(&starts).zip(&lens).enumerate() {
                let from = &src[(b * n + st) * w..(b * n + st + len) * w];
                data[r * width * w..r * width * w + len * w].copy_from_slice(from);
            }
            let sub = Tensor::new(vec![rows.len(), width, w], data)?;
            let out = model.forward(g, Input::Vectors(&sub), opts)?;
            let sub_targets: Vec<Vec<Vec<f64>>> = rows.iter().map(|&b| targets[b].clone()).collect();
            let first: Vec<usize> = starts.iter().map(|st| st / 2).collect();
            let pairs: Vec<usize> = lens.iter().map(|l| l.div_ceil(2)).collect();
            regression_loss(g, out.output, &sub_targets, &first, &pairs)
        }
    }
}

/// Graph handles of every loss component.
pub struct LossParts {
    pub total: Var,
    pub lce: Var,
    pub laux: Option<Var>,
    pub rc: Option<Var>,
    pub rd: Option<Var>,
    pub kl: Option<Var>,
    pub rp: Option<Var>,
    pub aux_skipped: usize,
    pub rd_skipped: bool,
}

/// Scalar values of the components, unweighted.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub lce: f64,
    pub laux: f64,
    pub rc: f64,
    pub rd: f64,
    pub kl: f64,
    pub rp: f64,
    pub total: f64,
}

impl LossParts {
    pub fn values<T: Float>(&self, g: &Graph<T>) -> LossValues {
        let v = |x: Option<Var>| x.map_or(0.0, |x| g.value(x).item().to_f64_lossy());
        LossValues {
            lce: v(Some(self.lce)),
            laux: v(self.laux),
            rc: v(self.rc),
            rd: v(self.rd),
            kl: v(self.kl),
            rp: v(self.rp),
            total: v(Some(self.total)),
        }
    }
}

impl LossValues {
    /// Recombine with the weights of `cfg` (the KL already carries β).
    pub fn weighted_sum(&self, cfg: &LossConfig, rp_weight: f64) -> f64 {
        cfg.eta * self.lce + (1.0 - cfg.eta) * self.laux + cfg.w_c * self.rc + cfg.w_d * self.rd + self.kl + rp_weight * self.rp
    }
}

/// Variational settings for the joint loss.
pub struct VaeTerm<'a> {
    pub beta: f64,
    pub kernel: &'a KernelMatrix,
}

/// Random streams consumed by one evaluation of the joint loss.
pub struct LossRngs<'a, R: Rng + ?Sized> {
    pub aux: &'a mut R,
    pub vae: &'a mut R,
}

/// `η·L_ce + (1−η)·L_aux + w_C·R_C + w_D·R_D (+ KL) (+ distribution matching)`.
pub fn joint_loss<T: Float, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    model: &Cgt<T>,
    batch: &Batch<T>,
    cfg: &LossConfig,
    vae: Option<VaeTerm>,
    rngs: LossRngs<R>,
) -> Result<LossParts> {
    let (b, n, dy) = (batch.len(), batch.seq_len(), model.cfg.dim_y);
    let vae_noise = match (&vae, model.cfg.vae) {
        (Some(_), true) => {
            let eps: Vec<f64> = (0..b * n * dy).map(|_| rngs.vae.sample(StandardNormal)).collect();
            VaeNoise::Given(Tensor::from_f64(&[b, n, dy], &eps)?)
        }
        _ => VaeNoise::Zero,
    };
    let out = model.forward(g, batch.input(), ForwardOpts { context: Context::Dynamic, pos_offsets: None, vae_noise })?;
    let y = out.y_computed.ok_or_else(|| CgtError::Model("dynamic run produced no context".into()))?;

    let lce = match (batch, model.cfg.input_mode) {
        (Batch::Tokens(seqs), InputMode::Token) => cross_entropy_loss(g, out.output, seqs)?,
        (Batch::Regression { targets, .. }, InputMode::Continuous { .. }) => {
            let pairs = n / 2;
            regression_loss(g, out.output, targets, &vec![0; b], &vec![pairs; b])?
        }
        _ => return Err(CgtError::Model("batch kind does not match model input mode".into())),
    };
    let mut total = g.scale(lce, cfg.eta);
    let add = |g: &mut Graph<T>, total: &mut Var, v: Var, w: f64| -> Result<()> {
        let wv = g.scale(v, w);
        *total = g.add(*total, wv)?;
        Ok(())
    };

    let mut aux_skipped = 0;
    let laux = if cfg.eta < 1.0 {
        let aux = auxiliary_loss(g, model, batch, y, cfg, rngs.aux)?;
        aux_skipped = aux.skipped;
        if let Some(l) = aux.loss {
            add(g, &mut total, l, 1.0 - cfg.eta)?;
        }
        aux.loss
    } else {
        None
    };
    let rc = if cfg.w_c > 0.0 {
        let r = reg_continuity(g, y, cfg.zeta)?;
        add(g, &mut total, r, cfg.w_c)?;
        Some(r)
    } else {
        None
    };
    let mut rd_skipped = false;
    let rd = if cfg.w_d > 0.0 {
        let r = reg_orthogonality(g, y, cfg.zeta)?;
        rd_skipped = r.is_none();
        if let Some(r) = r {
            add(g, &mut total, r, cfg.w_d)?;
        }
        r
    } else {
        None
    };
    let kl = match (&vae, out.vae) {
        (Some(v), Some((mu, sigma))) => {
            let k = if v.kernel.n == n { v.kernel.inv.clone() } else { return Err(CgtError::KernelSize { got: v.kernel.n * v.kernel.n, expected: n * n }) };
            let kl = vae_kl_term(g, mu, sigma, &k, v.beta)?;
            add(g, &mut total, kl, 1.0)?;
            Some(kl)
        }
        _ => None,
    };
    let mut rp = None;
    if cfg.w_p > 0.0 || cfg.w_pd > 0.0 {
        let mut acc: Option<Var> = None;
        if cfg.w_p > 0.0 {
            let kernel = vae.as_ref().map(|v| v.kernel).ok_or_else(|| CgtError::config("loss.w_p", "needs a prior kernel"))?;
            let tuples = sample_tuples(rngs.aux, n, dy, cfg.dist_pairs);
            let r = reg_dist_match(g, y, kernel, &tuples)?;
            let r = g.scale(r, cfg.w_p);
            acc = Some(r);
        }
        if cfg.w_pd > 0.0 {
            let r = reg_dist_match_local(g, y)?;
            let r = g.scale(r, cfg.w_pd);
            acc = Some(match acc {
                Some(a) => g.add(a, r)?,
                None => r,
            });
        }
        let r = acc.expect("at least one distribution-matching term");
        add(g, &mut total, r, 1.0)?;
        rp = Some(r);
    }
    Ok(LossParts { total, lce, laux, rc, rd, kl, rp, aux_skipped, rd_skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::gp::{build_kernel, KernelSpec};
    use cgt_tensor::{stream_rng, Stream};
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;

    fn value(g: &Graph<f64>, v: Var) -> f64 {
        g.value(v).item()
    }

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        Tensor::randn(shape, 1.0, &mut cgt_tensor::ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn cross_entropy_matches_log_softmax() {
        let (b, n, v) = (2, 4, 5);
        let logits = rand_tensor(&[b, n, v], 1);
        let seqs = vec![vec![0, 3, 1, 4], vec![2, 2, 0, 1]];
        let mut g = Graph::new();
        let l = g.constant(logits.clone());
        let loss = cross_entropy_loss(&mut g, l, &seqs).unwrap();
        let mut sum = 0.0;
        for bi in 0..b {
            for t in 0..n - 1 {
                let row = &logits.data()[(bi * n + t) * v..(bi * n + t + 1) * v];
                let lse = row.iter().map(|x| x.exp()).sum::<f64>().ln();
                sum += lse - row[seqs[bi][t + 1]];
            }
        }
        assert!((value(&g, loss) - sum / (b * (n - 1)) as f64).abs() < 1e-12);
    }

    #[test]
    fn zeta_profiles_have_unit_mean() {
        for z in [Zeta::Constant, Zeta::Linear, Zeta::Quadratic, Zeta::LastK(3)] {
            let w = zeta_weights(z, 2..=10);
            assert!((w.iter().sum::<f64>() / w.len() as f64 - 1.0).abs() < 1e-12);
        }
        let last = zeta_weights(Zeta::LastK(2), 2..=6);
        assert_eq!(last, vec![0.0, 0.0, 0.0, 2.5, 2.5]);
    }

    #[test]
    fn continuity_of_orthogonal_steps() {
        // consecutive orthonormal vectors: each step contributes ‖e_i − e_j‖² = 2
        let n = 4;
        let data: Vec<f64> = (0..n).flat_map(|s| (0..n).map(move |i| if i == s { 3.0 } else { 0.0 })).collect();
        let mut g = Graph::new();
        let y = g.constant(Tensor::from_f64(&[1, n, n], &data).unwrap());
        let r = reg_continuity(&mut g, y, Zeta::Constant).unwrap();
        assert!((value(&g, r) - 2.0 * (n - 1) as f64).abs() < 1e-12);
    }

    #[test]
    fn continuity_of_zero_vectors_is_finite() {
        let mut g = Graph::new();
        let y = g.variable(Tensor::zeros(&[2, 5, 3]));
        let r = reg_continuity(&mut g, y, Zeta::Linear).unwrap();
        assert_eq!(value(&g, r), 0.0);
        let grads = g.backward(r).unwrap();
        assert!(grads.get_or_zeros(y).all_finite());
    }

    #[test]
    fn orthogonality_of_identical_pair() {
        let row = rand_tensor(&[1, 6, 4], 2);
        let mut both = row.data().to_vec();
        both.extend_from_slice(row.data());
        let mut g = Graph::new();
        let y = g.constant(Tensor::new(vec![2, 6, 4], both).unwrap());
        let r = reg_orthogonality(&mut g, y, Zeta::Constant).unwrap().unwrap();
        assert!((value(&g, r) - 1.0).abs() < 1e-12);
        let single = g.constant(row);
        assert!(reg_orthogonality(&mut g, single, Zeta::Constant).unwrap().is_none());
    }

    fn dense_kl(mu: &[f64], var: &[f64], k: &[f64], n: usize) -> f64 {
        let km = DMatrix::from_row_slice(n, n, k);
        let kinv = km.clone().try_inverse().unwrap();
        let m = DVector::from_column_slice(mu);
        let tr: f64 = (0..n).map(|s| kinv[(s, s)] * var[s]).sum();
        let quad = (m.transpose() * &kinv * &m)[(0, 0)];
        let logdet_k = km.determinant().ln();
        let logdet_s: f64 = var.iter().map(|v| v.ln()).sum();
        0.5 * (tr + quad - n as f64 + logdet_k - logdet_s)
    }

    #[test]
    fn kl_matches_dense_gaussian() {
        let (b, n, d, beta) = (2, 5, 3, 0.7);
        let kernel = build_kernel(&KernelSpec::RbfMix { nu: 0.2, lambda_frac: 0.3 }, n).unwrap();
        let mu = rand_tensor(&[b, n, d], 3);
        let sigma = rand_tensor(&[b, n, d], 4).map(|v| 0.3 + v.abs());
        let mut g = Graph::new();
        let (m, s) = (g.constant(mu.clone()), g.constant(sigma.clone()));
        let kl = vae_kl_term(&mut g, m, s, &kernel.inv, beta).unwrap();
        let mut want = 0.0;
        for bi in 0..b {
            for i in 0..d {
                let at = |t: &Tensor<f64>, s: usize| t.data()[(bi * n + s) * d + i];
                let mv: Vec<f64> = (0..n).map(|s| at(&mu, s)).collect();
                let vv: Vec<f64> = (0..n).map(|s| at(&sigma, s).powi(2)).collect();
                want += beta * (dense_kl(&mv, &vv, &kernel.k, n) - 0.5 * kernel.log_det());
            }
        }
        assert!((value(&g, kl) - want / b as f64).abs() < 1e-9, "{} vs {}", value(&g, kl), want / b as f64);
    }

    #[test]
    fn kl_vanishes_at_standard_prior() {
        let mut g = Graph::new();
        let m = g.constant(Tensor::zeros(&[1, 4, 2]));
        let s = g.constant(Tensor::ones(&[1, 4, 2]));
        let eye: Vec<f64> = Tensor::<f64>::eye(4).into_data();
        let kl = vae_kl_term(&mut g, m, s, &eye, 1.0).unwrap();
        assert!(value(&g, kl).abs() < 1e-12);
        assert!(matches!(vae_kl_term(&mut g, m, s, &eye[..9], 1.0), Err(CgtError::KernelSize { .. })));
    }

    #[test]
    fn local_matching_is_zero_when_whitened() {
        // ±√d·e_i at every position: zero mean, identity covariance
        let (n, d) = (3, 2);
        let c = (d as f64).sqrt();
        let mut data = Vec::new();
        for i in 0..d {
            for sign in [1.0, -1.0] {
                for _ in 0..n {
                    data.extend((0..d).map(|j| if j == i { sign * c } else { 0.0 }));
                }
            }
        }
        let mut g = Graph::new();
        let y = g.constant(Tensor::from_f64(&[2 * d, n, d], &data).unwrap());
        let r = reg_dist_match_local(&mut g, y).unwrap();
        assert!(value(&g, r).abs() < 1e-12);
    }

    #[test]
    fn matching_of_zero_trace_is_kernel_energy() {
        let (n, d) = (4, 2);
        let kernel = build_kernel(&KernelSpec::FewShot { epsilon: 0.5 }, n).unwrap();
        let all: Vec<_> = (0..n).flat_map(|s| (0..n).flat_map(move |t| (0..d).flat_map(move |i| (0..d).map(move |j| (s, t, i, j))))).collect();
        let mut g = Graph::new();
        let y = g.constant(Tensor::zeros(&[3, n, d]));
        let r = reg_dist_match(&mut g, y, &kernel, &all).unwrap();
        let energy: f64 = kernel.k.iter().map(|k| k * k).sum::<f64>() * d as f64 / (n * n) as f64;
        assert!((value(&g, r) - energy).abs() < 1e-12);
    }

    #[test]
    fn split_ranges() {
        let mut rng = stream_rng(0, Stream::Aux, 0);
        assert_eq!(sample_split(&mut rng, 3, None, 1), None);
        for _ in 0..50 {
            let s = sample_split(&mut rng, 10, None, 1).unwrap();
            assert!((3..=9).contains(&s));
            let h = sample_split(&mut rng, 10, Some(4), 1).unwrap();
            assert!((3..=6).contains(&h));
            let c = sample_split(&mut rng, 10, None, 2).unwrap();
            assert_eq!((c - 1) % 2, 0);
        }
    }

    fn tiny() -> ModelConfig {
        ModelConfig { n_layers: 3, readout_layer: 2, dim_x: 8, dim_y: 4, heads_x: 2, heads_y: 1, rank: 2, n_templates: 3, max_seq_len: 16, ..ModelConfig::default() }
    }

    #[test]
    fn last_split_is_single_prediction() {
        let model = Cgt::<f64>::new(tiny(), 5).unwrap();
        let seq = vec![vec![1, 4, 2, 7, 3, 9]];
        let batch = Batch::Tokens(seq.clone());
        let mut g = Graph::new();
        let out = model.forward(&mut g, batch.input(), ForwardOpts::default()).unwrap();
        let y = out.y_computed.unwrap();
        let loss = aux_with_splits(&mut g, &model, &batch, y, &[0], &[5], None, true).unwrap();
        // reference: run [t5, t6] with the context frozen at y_4
        let frozen = g.value(y).data()[3 * 4..4 * 4].to_vec();
        let mut h = Graph::new();
        let c = h.constant(Tensor::from_f64(&[4], &frozen).unwrap());
        let suffix = vec![vec![3, 9]];
        let o = model.forward(&mut h, Input::Tokens(&suffix), ForwardOpts::with_context(Context::Constant(c))).unwrap();
        let logits = h.value(o.output).row(0).to_vec();
        let lse = logits.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((value(&g, loss) - (lse - logits[9])).abs() < 1e-12);
    }

    #[test]
    fn joint_loss_components_sum_and_reach_context_path() {
        let model = Cgt::<f64>::new(tiny(), 6).unwrap();
        let batch = Batch::Tokens(vec![vec![1, 2, 3, 4, 5, 6, 7, 8], vec![8, 7, 6, 5, 4, 3, 2, 1]]);
        let cfg = LossConfig { aux_samples: 2, w_pd: 0.3, ..LossConfig::default() };
        let mut g = Graph::new();
        let (mut a, mut v) = (stream_rng(1, Stream::Aux, 0), stream_rng(1, Stream::Vae, 0));
        let parts = joint_loss(&mut g, &model, &batch, &cfg, None, LossRngs { aux: &mut a, vae: &mut v }).unwrap();
        let vals = parts.values(&g);
        assert!((vals.weighted_sum(&cfg, 1.0) - vals.total).abs() < 1e-12);
        assert!(vals.laux > 0.0 && vals.rc > 0.0 && vals.rd > 0.0 && vals.rp > 0.0);
        let grads = g.backward(parts.total).unwrap();
        let w = g.param_var("stage1.0.attn_y.kqv").unwrap();
        assert!(grads.get_or_zeros(w).data().iter().any(|x| *x != 0.0));
    }

    #[test]
    fn aux_gradient_reaches_context_path_alone() {
        let model = Cgt::<f64>::new(tiny(), 7).unwrap();
        let batch = Batch::Tokens(vec![vec![1, 2, 3, 4, 5, 6, 7, 8]]);
        let mut g = Graph::new();
        let out = model.forward(&mut g, batch.input(), ForwardOpts::default()).unwrap();
        let loss = aux_with_splits(&mut g, &model, &batch, out.y_computed.unwrap(), &[0], &[4], Some(2), false).unwrap();
        let grads = g.backward(loss).unwrap();
        let w = g.param_var("stage1.1.mlp_y.w1").unwrap();
        assert!(grads.get_or_zeros(w).data().iter().any(|x| *x != 0.0));
    }
}
