//! The dual-stream transformer: parameter layout, initialization, forward pass
//! and the low-rank modulators of the layers above the readout layer.
//!
//! Parameter names are stable and double as checkpoint keys. Every tensor of
//! the context pathway contains `_y.` and every template lives under `bank.`,
//! so a specialized model is obtained by dropping both groups.

mod arch;
pub mod modulator;

pub use arch::{Context, ForwardOpts, ForwardOut, Input, VaeNoise};

use cgt_tensor::{stream_rng, Float, ParamStore, Stream, Tensor};

use crate::config::{InputMode, ModelConfig};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct Cgt<T: Float> {
    pub cfg: ModelConfig,
    pub params: ParamStore<T>,
}

/// Names of the three bank tensors of slot `kappa` (1-based).
pub fn bank_names(kappa: usize) -> [String; 3] {
    [format!("bank.k{kappa}.L"), format!("bank.k{kappa}.R"), format!("bank.k{kappa}.S")]
}

/// 1-based slot of the attention (`mlp = false`) or MLP sublayer of stage-2 block `j`.
pub fn slot(j: usize, mlp: bool) -> usize {
    2 * j + 1 + mlp as usize
}

/// True for parameters of the context pathway or the template bank.
pub fn is_context_param(name: &str) -> bool {
    name.starts_with("bank.") || name.contains("_y.")
}

impl<T: Float> Cgt<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream_rng(seed, Stream::Init, 0);
        let std = cfg.init_std;
        let (dx, dy) = (cfg.dim_x, cfg.dim_y);
        let (ix, iy) = (cfg.mlp_mult * dx, cfg.mlp_mult * dy);
        let mut p = ParamStore::new();
        let mut randn = |p: &mut ParamStore<T>, name: String, shape: &[usize], s: f64| {
            p.insert(name, Tensor::randn(shape, s, &mut rng));
        };
        let zeros = |p: &mut ParamStore<T>, name: String, n: usize| p.insert(name, Tensor::zeros(&[n]));
        let ln = |p: &mut ParamStore<T>, name: &str, n: usize| {
            p.insert(format!("{name}.g"), Tensor::ones(&[n]));
            p.insert(format!("{name}.b"), Tensor::zeros(&[n]));
        };

        if cfg.input_mode == InputMode::Token {
            randn(&mut p, "embed_x.w".into(), &[cfg.vocab_size, dx], std);
            randn(&mut p, "embed_y.w".into(), &[cfg.vocab_size, dy], std);
        }
        randn(&mut p, "pos_x.w".into(), &[cfg.max_seq_len, dx], std);
        randn(&mut p, "pos_y.w".into(), &[cfg.max_seq_len, dy], std);

        for i in 0..cfg.readout_layer {
            let pre = format!("stage1.{i}");
            ln(&mut p, &format!("{pre}.ln1_x"), dx);
            ln(&mut p, &format!("{pre}.ln1_y"), dy);
            randn(&mut p, format!("{pre}.attn_x.kqv"), &[dx, 3 * dx], std);
            zeros(&mut p, format!("{pre}.attn_x.kqv_b"), 3 * dx);
            randn(&mut p, format!("{pre}.attn_x.out"), &[dx, dx], std);
            zeros(&mut p, format!("{pre}.attn_x.out_b"), dx);
            randn(&mut p, format!("{pre}.attn_y.kqv"), &[dx + dy, 3 * dy], std);
            zeros(&mut p, format!("{pre}.attn_y.kqv_b"), 3 * dy);
            randn(&mut p, format!("{pre}.attn_y.out"), &[dy, dy], std);
            zeros(&mut p, format!("{pre}.attn_y.out_b"), dy);
            ln(&mut p, &format!("{pre}.ln2_x"), dx);
            ln(&mut p, &format!("{pre}.ln2_y"), dy);
            randn(&mut p, format!("{pre}.mlp_x.w1"), &[dx, ix], std);
            zeros(&mut p, format!("{pre}.mlp_x.b1"), ix);
            randn(&mut p, format!("{pre}.mlp_x.w2"), &[ix, dx], std);
            zeros(&mut p, format!("{pre}.mlp_x.b2"), dx);
            randn(&mut p, format!("{pre}.mlp_y.w1"), &[dx + dy, iy], std);
            zeros(&mut p, format!("{pre}.mlp_y.b1"), iy);
            randn(&mut p, format!("{pre}.mlp_y.w2"), &[iy, dy], std);
            zeros(&mut p, format!("{pre}.mlp_y.b2"), dy);
        }
        if cfg.vae {
            randn(&mut p, "vae_y.w".into(), &[dy, 2 * dy], std);
            zeros(&mut p, "vae_y.b".into(), 2 * dy);
        }
        for j in 0..cfg.n_stage2() {
            let pre = format!("stage2.{j}");
            ln(&mut p, &format!("{pre}.ln1"), dx);
            randn(&mut p, format!("{pre}.attn.kqv"), &[dx, 3 * dx], std);
            zeros(&mut p, format!("{pre}.attn.kqv_b"), 3 * dx);
            randn(&mut p, format!("{pre}.attn.out"), &[dx, dx], std);
            zeros(&mut p, format!("{pre}.attn.out_b"), dx);
            ln(&mut p, &format!("{pre}.ln2"), dx);
            randn(&mut p, format!("{pre}.mlp.w1"), &[dx, ix], std);
            zeros(&mut p, format!("{pre}.mlp.b1"), ix);
            randn(&mut p, format!("{pre}.mlp.w2"), &[ix, dx], std);
            zeros(&mut p, format!("{pre}.mlp.b2"), dx);
        }
        for kappa in 1..=cfg.n_slots() {
            let [l, r, s] = bank_names(kappa);
            randn(&mut p, l, &[cfg.n_templates, dx, cfg.rank], std);
            randn(&mut p, r, &[cfg.n_templates, dx + 1, cfg.rank], 1.0 / ((dx + 1) as f64).sqrt());
            randn(&mut p, s, &[cfg.n_templates, dy + 1], 1.0 / ((dy + 1) as f64).sqrt());
        }
        ln(&mut p, "ln_f", dx);
        randn(&mut p, "head.w".into(), &[dx, cfg.out_dim()], std);
        zeros(&mut p, "head.b".into(), cfg.out_dim());
        Ok(Cgt { cfg, params: p })
    }

    pub fn cast<U: Float>(&self) -> Cgt<U> {
        Cgt { cfg: self.cfg.clone(), params: self.params.cast() }
    }

    /// True when the context pathway and template bank are absent.
    pub fn is_specialized(&self) -> bool {
        !self.params.names().any(is_context_param)
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }
}
