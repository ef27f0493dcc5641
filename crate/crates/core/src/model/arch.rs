use cgt_tensor::{Float, Graph, Tensor, Var};

use super::{bank_names, modulator, slot, Cgt};
use crate::config::InputMode;
use crate::error::{CgtError, Result};

/// Model input; all sequences in a batch share one length.
pub enum Input<'a, T> {
    Tokens(&'a [Vec<usize>]),
    /// `[B, n, w]` with `w ≤ d_x`, zero-padded into the x slot.
    Vectors(&'a Tensor<T>),
}

/// Source of the context vector that drives the modulators.
pub enum Context<T> {
    /// Computed by the stage-1 context pathway.
    Dynamic,
    /// `[d_y]` or `[B, d_y]`, held fixed over all positions; the context
    /// pathway is skipped.
    Constant(Var),
    /// `[n, d_y]` or `[B, n, d_y]`; the context pathway is skipped.
    PerPosition(Var),
    /// Exponential moving average of the computed context, seeded at `init`
    /// (`[d_y]` or `[B, d_y]`).
    MovingAverage { init: Tensor<T>, gamma: f64 },
    /// No context pathway and no modulators.
    None,
}

/// Reparameterization noise for variational models.
pub enum VaeNoise<T> {
    /// Use the posterior mean.
    Zero,
    /// `ε` of shape `[B, n, d_y]`.
    Given(Tensor<T>),
}

pub struct ForwardOpts<T> {
    pub context: Context<T>,
    /// First position index of each sequence; zero when absent.
    pub pos_offsets: Option<Vec<usize>>,
    pub vae_noise: VaeNoise<T>,
}

impl<T> Default for ForwardOpts<T> {
    fn default() -> Self {
        ForwardOpts { context: Context::Dynamic, pos_offsets: None, vae_noise: VaeNoise::Zero }
    }
}

impl<T> ForwardOpts<T> {
    pub fn with_context(context: Context<T>) -> Self {
        ForwardOpts { context, ..Self::default() }
    }
}

pub struct ForwardOut {
    /// Logits `[B, n, V]` or regression outputs `[B, n, d_out]`.
    pub output: Var,
    /// Context fed to the modulators, `[B, n, d_y]`.
    pub y_used: Option<Var>,
    /// Context produced by the pathway at the readout layer, `[B, n, d_y]`.
    pub y_computed: Option<Var>,
    /// Posterior `(μ, σ)` of variational models.
    pub vae: Option<(Var, Var)>,
    /// x after the embedding and after each layer.
    pub x_layers: Vec<Var>,
    /// y after the embedding and after each stage-1 layer.
    pub y_layers: Vec<Var>,
}

struct Dims {
    b: usize,
    n: usize,
}

impl<T: Float> Cgt<T> {
    fn p(&self, g: &mut Graph<T>, name: &str) -> Result<Var> {
        Ok(self.params.bind(g, name)?)
    }

    fn linear(&self, g: &mut Graph<T>, x: Var, w: &str, b: &str) -> Result<Var> {
        let w = self.p(g, w)?;
        let b = self.p(g, b)?;
        let h = g.matmul(x, w)?;
        Ok(g.add(h, b)?)
    }

    fn ln(&self, g: &mut Graph<T>, x: Var, name: &str) -> Result<Var> {
        let gain = self.p(g, &format!("{name}.g"))?;
        let bias = self.p(g, &format!("{name}.b"))?;
        Ok(g.layer_norm(x, gain, bias, self.cfg.ln_eps)?)
    }

    /// Causal multi-head attention on `h[B, n, ·]` with fused `{pre}.kqv`
    /// projection and `{pre}.out` output map, result `[B, n, d]`.
    fn attention(&self, g: &mut Graph<T>, h: Var, pre: &str, heads: usize, d: usize, dims: &Dims) -> Result<Var> {
        let (b, n) = (dims.b, dims.n);
        let hd = d / heads;
        let kqv = self.linear(g, h, &format!("{pre}.kqv"), &format!("{pre}.kqv_b"))?;
        let kqv = g.reshape(kqv, &[b, n, 3, heads, hd])?;
        let kqv = g.permute(kqv, &[2, 0, 3, 1, 4])?;
        let mut part = |i: usize| -> Result<Var> {
            let s = g.slice(kqv, 0, i, i + 1)?;
            Ok(g.reshape(s, &[b * heads, n, hd])?)
        };
        let (k, q, v) = (part(0)?, part(1)?, part(2)?);
        let scores = g.bmm(q, k, true)?;
        let scores = g.scale(scores, 1.0 / (hd as f64).sqrt());
        let probs = g.softmax(scores, true)?;
        let ctx = g.bmm(probs, v, false)?;
        let ctx = g.reshape(ctx, &[b, heads, n, hd])?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[b, n, d])?;
        self.linear(g, ctx, &format!("{pre}.out"), &format!("{pre}.out_b"))
    }

    fn mlp(&self, g: &mut Graph<T>, h: Var, pre: &str) -> Result<Var> {
        let a = self.linear(g, h, &format!("{pre}.w1"), &format!("{pre}.b1"))?;
        let a = g.gelu(a);
        self.linear(g, a, &format!("{pre}.w2"), &format!("{pre}.b2"))
    }

    fn positions(&self, g: &mut Graph<T>, table: &str, offsets: &[usize], dims: &Dims) -> Result<Var> {
        let width = self.params.get(table)?.shape()[1];
        let t = self.p(g, table)?;
        if offsets.iter().all(|&o| o == 0) {
            let rows = g.slice(t, 0, 0, dims.n)?;
            return Ok(g.reshape(rows, &[1, dims.n, width])?);
        }
        let ids: Vec<usize> = offsets.iter().flat_map(|&o| o..o + dims.n).collect();
        let rows = g.embedding(t, &ids)?;
        Ok(g.reshape(rows, &[dims.b, dims.n, width])?)
    }

    fn embed(&self, g: &mut Graph<T>, input: &Input<T>, offsets: &[usize], ypath: bool, dims: &Dims) -> Result<(Var, Option<Var>)> {
        let (dx, dy) = (self.cfg.dim_x, self.cfg.dim_y);
        let (b, n) = (dims.b, dims.n);
        let px = self.positions(g, "pos_x.w", offsets, dims)?;
        let (x, y) = match input {
            Input::Tokens(seqs) => {
                let ids: Vec<usize> = seqs.iter().flatten().copied().collect();
                let table = self.p(g, "embed_x.w")?;
                let ex = g.embedding(table, &ids)?;
                let ex = g.reshape(ex, &[b, n, dx])?;
                let y = if ypath {
                    let table = self.p(g, "embed_y.w")?;
                    let ey = g.embedding(table, &ids)?;
                    Some(g.reshape(ey, &[b, n, dy])?)
                } else {
                    None
                };
                (ex, y)
            }
            Input::Vectors(v) => {
                let w = v.shape()[2];
                let mut padded = vec![T::zero(); b * n * dx];
                for (dst, src) in padded.chunks_mut(dx).zip(v.data().chunks(w)) {
                    dst[..w].copy_from_slice(src);
                }
                let ex = g.constant(Tensor::new(vec![b, n, dx], padded)?);
                let y = if ypath { Some(g.constant(Tensor::zeros(&[b, n, dy]))) } else { None };
                (ex, y)
            }
        };
        let x = g.add(x, px)?;
        let y = match y {
            Some(y) => {
                let py = self.positions(g, "pos_y.w", offsets, dims)?;
                Some(g.add(y, py)?)
            }
            None => None,
        };
        Ok((x, y))
    }

    fn check_input(&self, input: &Input<T>, offsets: &[usize]) -> Result<Dims> {
        let (b, n) = match input {
            Input::Tokens(seqs) => {
                let n = seqs.first().map_or(0, Vec::len);
                if let Some(s) = seqs.iter().find(|s| s.len() != n) {
                    return Err(CgtError::Model(format!("ragged batch: lengths {n} and {}", s.len())));
                }
                if self.cfg.input_mode != InputMode::Token {
                    return Err(CgtError::Model("token input given to a continuous model".into()));
                }
                let vocab = self.cfg.vocab_size;
                if let Some(&id) = seqs.iter().flatten().find(|&&t| t >= vocab) {
                    return Err(CgtError::TokenOutOfRange { id, vocab });
                }
                (seqs.len(), n)
            }
            Input::Vectors(v) => {
                let s = v.shape();
                if s.len() != 3 || s[2] > self.cfg.dim_x || self.cfg.input_mode == InputMode::Token {
                    return Err(CgtError::Model(format!("continuous input of shape {s:?} does not fit the model")));
                }
                (s[0], s[1])
            }
        };
        if b == 0 || n == 0 {
            return Err(CgtError::Model("empty batch".into()));
        }
        if n > self.cfg.max_seq_len {
            return Err(CgtError::SequenceTooLong { len: n, max: self.cfg.max_seq_len });
        }
        if offsets.len() != b {
            return Err(CgtError::Model(format!("{} position offsets for batch of {b}", offsets.len())));
        }
        if let Some(&o) = offsets.iter().find(|&&o| o + n > self.cfg.max_seq_len) {
            return Err(CgtError::PositionOutOfRange { pos: o + n - 1, len: self.cfg.max_seq_len });
        }
        Ok(Dims { b, n })
    }

    /// Broadcast an override to `[B, n, d_y]`; constant overrides come back
    /// as `[B, 1, d_y]` together with the broadcast.
    fn expand_override(&self, g: &mut Graph<T>, y: Var, per_position: bool, dims: &Dims) -> Result<(Var, Var)> {
        let dy = self.cfg.dim_y;
        let s = g.shape(y).to_vec();
        let (b, n) = (dims.b, dims.n);
        let compact = match (per_position, s.as_slice()) {
            (false, [d]) if *d == dy => g.reshape(y, &[1, 1, dy])?,
            (false, [bb, d]) if *bb == b && *d == dy => g.reshape(y, &[b, 1, dy])?,
            (true, [nn, d]) if *nn == n && *d == dy => g.reshape(y, &[1, n, dy])?,
            (true, [bb, nn, d]) if *bb == b && *nn == n && *d == dy => y,
            _ => {
                let expected = if per_position { format!("[{n}, {dy}] or [{b}, {n}, {dy}]") } else { format!("[{dy}] or [{b}, {dy}]") };
                return Err(CgtError::OverrideShape { got: s, expected });
            }
        };
        let cs = g.shape(compact).to_vec();
        let compact = if cs[0] != b { g.broadcast_to(compact, &[b, cs[1], dy])? } else { compact };
        let full = if cs[1] != n { g.broadcast_to(compact, &[b, n, dy])? } else { compact };
        Ok((compact, full))
    }

    pub fn forward(&self, g: &mut Graph<T>, input: Input<T>, opts: ForwardOpts<T>) -> Result<ForwardOut> {
        let cfg = &self.cfg;
        let b_guess = match &input {
            Input::Tokens(s) => s.len(),
            Input::Vectors(v) => v.shape().first().copied().unwrap_or(0),
        };
        let offsets = opts.pos_offsets.clone().unwrap_or_else(|| vec![0; b_guess]);
        let dims = self.check_input(&input, &offsets)?;
        let (b, n) = (dims.b, dims.n);
        let ypath = matches!(opts.context, Context::Dynamic | Context::MovingAverage { .. });

        let (mut x, mut y) = self.embed(g, &input, &offsets, ypath, &dims)?;
        let mut x_layers = vec![x];
        let mut y_layers: Vec<Var> = y.into_iter().collect();

        for i in 0..cfg.readout_layer {
            let pre = format!("stage1.{i}");
            let hx = self.ln(g, x, &format!("{pre}.ln1_x"))?;
            let ax = self.attention(g, hx, &format!("{pre}.attn_x"), cfg.heads_x, cfg.dim_x, &dims)?;
            if let Some(yv) = y {
                let hy = self.ln(g, yv, &format!("{pre}.ln1_y"))?;
                let hxy = g.concat(&[hx, hy], 2)?;
                let ay = self.attention(g, hxy, &format!("{pre}.attn_y"), cfg.heads_y, cfg.dim_y, &dims)?;
                y = Some(g.add(yv, ay)?);
            }
            x = g.add(x, ax)?;
            let hx = self.ln(g, x, &format!("{pre}.ln2_x"))?;
            let mx = self.mlp(g, hx, &format!("{pre}.mlp_x"))?;
            if let Some(yv) = y {
                let hy = self.ln(g, yv, &format!("{pre}.ln2_y"))?;
                let hxy = g.concat(&[hx, hy], 2)?;
                let my = self.mlp(g, hxy, &format!("{pre}.mlp_y"))?;
                let yv = g.add(yv, my)?;
                y_layers.push(yv);
                y = Some(yv);
            }
            x = g.add(x, mx)?;
            x_layers.push(x);
        }

        let mut vae = None;
        let y_computed = match y {
            Some(yl) if cfg.vae => {
                let stats = self.linear(g, yl, "vae_y.w", "vae_y.b")?;
                let mu = g.slice(stats, 2, 0, cfg.dim_y)?;
                let pre_sigma = g.slice(stats, 2, cfg.dim_y, 2 * cfg.dim_y)?;
                let sigma = g.softplus(pre_sigma);
                vae = Some((mu, sigma));
                Some(match &opts.vae_noise {
                    VaeNoise::Zero => mu,
                    VaeNoise::Given(eps) => {
                        if eps.shape() != [b, n, cfg.dim_y] {
                            return Err(CgtError::OverrideShape {
                                got: eps.shape().to_vec(),
                                expected: format!("[{b}, {n}, {}]", cfg.dim_y),
                            });
                        }
                        let e = g.constant(eps.clone());
                        let noise = g.mul(sigma, e)?;
                        g.add(mu, noise)?
                    }
                })
            }
            other => other,
        };

        // (compact context for σ, broadcast context)
        let ctx: Option<(Var, Var)> = match opts.context {
            Context::None => None,
            Context::Dynamic => y_computed.map(|v| (v, v)),
            Context::Constant(v) => Some(self.expand_override(g, v, false, &dims)?),
            Context::PerPosition(v) => Some(self.expand_override(g, v, true, &dims)?),
            Context::MovingAverage { init, gamma } => {
                let computed = g.value(y_computed.expect("context pathway ran")).clone();
                let ema = moving_average(&computed, &init, gamma, b, n, cfg.dim_y)?;
                let v = g.constant(ema);
                Some((v, v))
            }
        };

        let mut sigmas = Vec::new();
        if let Some((compact, _)) = ctx {
            let cs = g.shape(compact).to_vec();
            for kappa in 1..=cfg.n_slots() {
                let [_, _, s] = bank_names(kappa);
                let s = self.p(g, &s)?;
                let sig = modulator::mixing(g, compact, s, cfg.mixing)?;
                let sig = if cs[1] != n { g.broadcast_to(sig, &[b, n, cfg.n_templates])? } else { sig };
                sigmas.push(sig);
            }
        }
        let modulate = |me: &Self, g: &mut Graph<T>, h: Var, kappa: usize| -> Result<Var> {
            match sigmas.get(kappa - 1) {
                Some(&sig) => {
                    let [l, r, _] = bank_names(kappa);
                    let l = me.p(g, &l)?;
                    let r = me.p(g, &r)?;
                    modulator::apply(g, h, sig, l, r)
                }
                None => Ok(h),
            }
        };

        for j in 0..cfg.n_stage2() {
            let pre = format!("stage2.{j}");
            let h = self.ln(g, x, &format!("{pre}.ln1"))?;
            let h = modulate(self, g, h, slot(j, false))?;
            let a = self.attention(g, h, &format!("{pre}.attn"), cfg.heads_x, cfg.dim_x, &dims)?;
            x = g.add(x, a)?;
            let h = self.ln(g, x, &format!("{pre}.ln2"))?;
            let h = modulate(self, g, h, slot(j, true))?;
            let m = self.mlp(g, h, &format!("{pre}.mlp"))?;
            x = g.add(x, m)?;
            x_layers.push(x);
        }

        let h = self.ln(g, x, "ln_f")?;
        let output = self.linear(g, h, "head.w", "head.b")?;
        Ok(ForwardOut { output, y_used: ctx.map(|c| c.1), y_computed, vae, x_layers, y_layers })
    }
}

/// `used_i = (1 − γ)·used_{i−1} + γ·computed_i`, with `used_{−1} = init`.
fn moving_average<T: Float>(computed: &Tensor<T>, init: &Tensor<T>, gamma: f64, b: usize, n: usize, dy: usize) -> Result<Tensor<T>> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(CgtError::config("gamma", format!("must be in (0, 1], got {gamma}")));
    }
    let per_seq = match init.shape() {
        [d] if *d == dy => false,
        [bb, d] if *bb == b && *d == dy => true,
        s => return Err(CgtError::OverrideShape { got: s.to_vec(), expected: format!("[{dy}] or [{b}, {dy}]") }),
    };
    let c = computed.to_f64_vec();
    let i0 = init.to_f64_vec();
    let mut out = vec![0.0; b * n * dy];
    for bi in 0..b {
        let mut cur: Vec<f64> = if per_seq { i0[bi * dy..(bi + 1) * dy].to_vec() } else { i0.clone() };
        for t in 0..n {
            let off = (bi * n + t) * dy;
            for k in 0..dy {
                cur[k] = (1.0 - gamma) * cur[k] + gamma * c[off + k];
                out[off + k] = cur[k];
            }
        }
    }
    Ok(Tensor::from_f64(&[b, n, dy], &out)?)
}
