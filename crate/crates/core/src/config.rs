//! Run configuration as flat dotted `key=value` pairs.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::datasets::{DataSpec, IclSpec, LinRegSpec, TextSpec};
use crate::error::{CgtError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mixing {
    Tanh,
    Softmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputMode {
    Token,
    Continuous { d_in: usize, d_out: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub n_layers: usize,
    /// Readout layer ℓ, 1-based.
    pub readout_layer: usize,
    pub dim_x: usize,
    pub dim_y: usize,
    pub heads_x: usize,
    pub heads_y: usize,
    pub mlp_mult: usize,
    pub rank: usize,
    pub n_templates: usize,
    pub mixing: Mixing,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub input_mode: InputMode,
    pub vae: bool,
    pub ln_eps: f64,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_layers: 6,
            readout_layer: 4,
            dim_x: 112,
            dim_y: 64,
            heads_x: 7,
            heads_y: 4,
            mlp_mult: 4,
            rank: 4,
            n_templates: 16,
            mixing: Mixing::Tanh,
            vocab_size: crate::datasets::vocab::ICL_VOCAB.len(),
            max_seq_len: 256,
            input_mode: InputMode::Token,
            vae: false,
            ln_eps: 1e-5,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(CgtError::Model(m));
        if self.heads_x == 0 || self.dim_x % self.heads_x != 0 {
            return err(format!("dim_x {} not divisible by heads_x {}", self.dim_x, self.heads_x));
        }
        if self.heads_y == 0 || self.dim_y % self.heads_y != 0 {
            return err(format!("dim_y {} not divisible by heads_y {}", self.dim_y, self.heads_y));
        }
        if self.readout_layer < 1 || self.readout_layer >= self.n_layers {
            return err(format!("readout_layer {} not in [1, {})", self.readout_layer, self.n_layers));
        }
        if self.rank == 0 || self.n_templates == 0 || self.mlp_mult == 0 || self.max_seq_len == 0 {
            return err("rank, n_templates, mlp_mult and max_seq_len must be positive".into());
        }
        if let InputMode::Continuous { d_in, d_out } = self.input_mode {
            if d_in > self.dim_x || d_out > self.dim_x || d_in == 0 || d_out == 0 {
                return err(format!("continuous dims ({d_in}, {d_out}) must be in 1..={}", self.dim_x));
            }
        } else if self.vocab_size == 0 {
            return err("vocab_size must be positive".into());
        }
        Ok(())
    }

    /// Number of modulated slots, 2(L − ℓ).
    pub fn n_slots(&self) -> usize {
        2 * (self.n_layers - self.readout_layer)
    }

    pub fn n_stage2(&self) -> usize {
        self.n_layers - self.readout_layer
    }

    /// Output width of the readout head.
    pub fn out_dim(&self) -> usize {
        match self.input_mode {
            InputMode::Token => self.vocab_size,
            InputMode::Continuous { d_out, .. } => d_out,
        }
    }
}

/// Positional weighting ζ(s) of the element-wise regularizers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Zeta {
    Constant,
    Linear,
    Quadratic,
    /// Only the last `k` positions.
    LastK(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub eta: f64,
    pub w_c: f64,
    pub w_d: f64,
    pub horizon: Option<usize>,
    pub zeta: Zeta,
    pub aux_samples: usize,
    /// Start auxiliary suffix positions at 0 instead of their original offset.
    pub rebase_positions: bool,
    /// Weight of the full distribution-matching regularizer.
    pub w_p: f64,
    /// Weight of the simplified (same-position) distribution-matching regularizer.
    pub w_pd: f64,
    /// Sampled (s, t, i, j) tuples per step for the full variant.
    pub dist_pairs: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            eta: 0.5,
            w_c: 0.08,
            w_d: 0.04,
            horizon: None,
            zeta: Zeta::Constant,
            aux_samples: 1,
            rebase_positions: true,
            w_p: 0.0,
            w_pd: 0.0,
            dist_pairs: 256,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelKind {
    RbfMix { nu: f64, lambda_frac: f64 },
    FewShot { epsilon: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeConfig {
    pub beta_y: f64,
    pub kernel: KernelKind,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig { beta_y: 0.1, kernel: KernelKind::RbfMix { nu: 0.03, lambda_frac: 0.1 } }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub warmup: usize,
    pub total_steps: usize,
    pub batch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip: Option<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 2.5e-4,
            warmup: 500,
            total_steps: 20_000,
            batch: 32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-8,
            clip: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Steps between evaluations; 0 disables periodic eval.
    pub eval_every: usize,
    pub eval_batches: usize,
    /// Steps between last-good checkpoint refreshes.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { eval_every: 1000, eval_batches: 4, checkpoint_every: 500 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub vae: VaeConfig,
    pub data: DataSpec,
    pub optim: OptimConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            vae: VaeConfig::default(),
            data: DataSpec::Icl(IclSpec::default()),
            optim: OptimConfig::default(),
            train: TrainConfig::default(),
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| CgtError::config(key, format!("cannot parse `{v}`: {e}")))
}

fn parse_opt<T: FromStr>(key: &str, v: &str) -> Result<Option<T>>
where
    T::Err: fmt::Display,
{
    if v == "none" {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

fn opt_str<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), |x| x.to_string())
}

impl RunConfig {
    /// Apply one `key=value` setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        let m = &mut self.model;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),

            "model.n_layers" => m.n_layers = parse(key, v)?,
            "model.readout_layer" => m.readout_layer = parse(key, v)?,
            "model.dim_x" => m.dim_x = parse(key, v)?,
            "model.dim_y" => m.dim_y = parse(key, v)?,
            "model.heads_x" => m.heads_x = parse(key, v)?,
            "model.heads_y" => m.heads_y = parse(key, v)?,
            "model.mlp_mult" => m.mlp_mult = parse(key, v)?,
            "model.rank" => m.rank = parse(key, v)?,
            "model.n_templates" => m.n_templates = parse(key, v)?,
            "model.mixing" => {
                m.mixing = match v {
                    "tanh" => Mixing::Tanh,
                    "softmax" => Mixing::Softmax,
                    _ => return Err(CgtError::config(key, format!("expected tanh|softmax, got `{v}`"))),
                }
            }
            "model.vocab_size" => m.vocab_size = parse(key, v)?,
            "model.max_seq_len" => m.max_seq_len = parse(key, v)?,
            "model.input_mode" => {
                m.input_mode = match (v, m.input_mode) {
                    ("token", _) => InputMode::Token,
                    ("continuous", InputMode::Continuous { d_in, d_out }) => InputMode::Continuous { d_in, d_out },
                    ("continuous", InputMode::Token) => InputMode::Continuous { d_in: 16, d_out: 1 },
                    _ => return Err(CgtError::config(key, format!("expected token|continuous, got `{v}`"))),
                }
            }
            "model.d_in" | "model.d_out" => {
                let n: usize = parse(key, v)?;
                let InputMode::Continuous { d_in, d_out } = &mut m.input_mode else {
                    return Err(CgtError::config(key, "requires model.input_mode=continuous set first"));
                };
                *(if key == "model.d_in" { d_in } else { d_out }) = n;
            }
            "model.vae" => m.vae = parse(key, v)?,
            "model.ln_eps" => m.ln_eps = parse(key, v)?,
            "model.init_std" => m.init_std = parse(key, v)?,

            "loss.eta" => self.loss.eta = parse(key, v)?,
            "loss.w_c" => self.loss.w_c = parse(key, v)?,
            "loss.w_d" => self.loss.w_d = parse(key, v)?,
            "loss.horizon" => self.loss.horizon = parse_opt(key, v)?,
            "loss.zeta" => {
                self.loss.zeta = match v {
                    "constant" => Zeta::Constant,
                    "linear" => Zeta::Linear,
                    "quadratic" => Zeta::Quadratic,
                    _ => match v.strip_prefix("last:") {
                        Some(k) => Zeta::LastK(parse(key, k)?),
                        None => {
                            return Err(CgtError::config(key, format!("expected constant|linear|quadratic|last:K, got `{v}`")))
                        }
                    },
                }
            }
            "loss.aux_samples" => self.loss.aux_samples = parse(key, v)?,
            "loss.rebase_positions" => self.loss.rebase_positions = parse(key, v)?,
            "loss.w_p" => self.loss.w_p = parse(key, v)?,
            "loss.w_pd" => self.loss.w_pd = parse(key, v)?,
            "loss.dist_pairs" => self.loss.dist_pairs = parse(key, v)?,

            "vae.beta_y" => self.vae.beta_y = parse(key, v)?,
            "vae.kernel" => {
                self.vae.kernel = match v {
                    "rbf_mix" => KernelKind::RbfMix { nu: 0.03, lambda_frac: 0.1 },
                    "fewshot" => KernelKind::FewShot { epsilon: 1.0 },
                    _ => return Err(CgtError::config(key, format!("expected rbf_mix|fewshot, got `{v}`"))),
                }
            }
            "vae.nu" | "vae.lambda_frac" => {
                let x: f64 = parse(key, v)?;
                let KernelKind::RbfMix { nu, lambda_frac } = &mut self.vae.kernel else {
                    return Err(CgtError::config(key, "requires vae.kernel=rbf_mix set first"));
                };
                *(if key == "vae.nu" { nu } else { lambda_frac }) = x;
            }
            "vae.epsilon" => {
                let KernelKind::FewShot { epsilon } = &mut self.vae.kernel else {
                    return Err(CgtError::config(key, "requires vae.kernel=fewshot set first"));
                };
                *epsilon = parse(key, v)?;
            }

            "optim.lr" => self.optim.lr = parse(key, v)?,
            "optim.warmup" => self.optim.warmup = parse(key, v)?,
            "optim.total_steps" => self.optim.total_steps = parse(key, v)?,
            "optim.batch" => self.optim.batch = parse(key, v)?,
            "optim.beta1" => self.optim.beta1 = parse(key, v)?,
            "optim.beta2" => self.optim.beta2 = parse(key, v)?,
            "optim.eps" => self.optim.eps = parse(key, v)?,
            "optim.weight_decay" => self.optim.weight_decay = parse(key, v)?,
            "optim.clip" => self.optim.clip = parse_opt(key, v)?,

            "train.eval_every" => self.train.eval_every = parse(key, v)?,
            "train.eval_batches" => self.train.eval_batches = parse(key, v)?,
            "train.checkpoint_every" => self.train.checkpoint_every = parse(key, v)?,

            "data.kind" => {
                self.data = match v {
                    "icl" => DataSpec::Icl(IclSpec::default()),
                    "linreg" => DataSpec::LinReg(LinRegSpec::default()),
                    "text" => DataSpec::Text(TextSpec::default()),
                    _ => return Err(CgtError::config(key, format!("expected icl|linreg|text, got `{v}`"))),
                }
            }
            _ if key.starts_with("data.") => self.set_data(key, v)?,
            _ => return Err(CgtError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    fn set_data(&mut self, key: &str, v: &str) -> Result<()> {
        match (&mut self.data, key) {
            (DataSpec::Icl(s), "data.n_tasks") => s.n_tasks = parse(key, v)?,
            (DataSpec::Icl(s), "data.n_ex") => s.n_ex = parse(key, v)?,
            (DataSpec::Icl(s), "data.digits") => s.digits = parse(key, v)?,
            (DataSpec::LinReg(s), "data.d_in") => s.d_in = parse(key, v)?,
            (DataSpec::LinReg(s), "data.d_out") => s.d_out = parse(key, v)?,
            (DataSpec::LinReg(s), "data.n_pairs") => s.n_pairs = parse(key, v)?,
            (DataSpec::LinReg(s), "data.noise") => s.noise = parse(key, v)?,
            (DataSpec::Text(s), "data.corpus") => {
                s.corpus = v.split(',').filter(|p| !p.is_empty()).map(PathBuf::from).collect()
            }
            (DataSpec::Text(s), "data.l_max") => s.l_max = parse(key, v)?,
            (DataSpec::Text(s), "data.l_start") => s.l_start = parse(key, v)?,
            (DataSpec::Text(s), "data.l_finish") => s.l_finish = parse(key, v)?,
            (DataSpec::Text(s), "data.n_excerpts") => s.n_excerpts = parse(key, v)?,
            (DataSpec::Text(s), "data.split_lines") => s.split_lines = parse(key, v)?,
            _ => return Err(CgtError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// All settings as ordered `(key, value)` pairs; `set` of each pair on a
    /// default config reproduces `self`.
    pub fn entries(&self) -> Vec<(String, String)> {
        let m = &self.model;
        let mut e: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("output_dir", self.output_dir.display().to_string()),
            ("model.n_layers", m.n_layers.to_string()),
            ("model.readout_layer", m.readout_layer.to_string()),
            ("model.dim_x", m.dim_x.to_string()),
            ("model.dim_y", m.dim_y.to_string()),
            ("model.heads_x", m.heads_x.to_string()),
            ("model.heads_y", m.heads_y.to_string()),
            ("model.mlp_mult", m.mlp_mult.to_string()),
            ("model.rank", m.rank.to_string()),
            ("model.n_templates", m.n_templates.to_string()),
            ("model.mixing", if m.mixing == Mixing::Tanh { "tanh" } else { "softmax" }.into()),
            ("model.vocab_size", m.vocab_size.to_string()),
            ("model.max_seq_len", m.max_seq_len.to_string()),
        ];
        match m.input_mode {
            InputMode::Token => e.push(("model.input_mode", "token".into())),
            InputMode::Continuous { d_in, d_out } => {
                e.push(("model.input_mode", "continuous".into()));
                e.push(("model.d_in", d_in.to_string()));
                e.push(("model.d_out", d_out.to_string()));
            }
        }
        e.extend([
            ("model.vae", m.vae.to_string()),
            ("model.ln_eps", m.ln_eps.to_string()),
            ("model.init_std", m.init_std.to_string()),
            ("loss.eta", self.loss.eta.to_string()),
            ("loss.w_c", self.loss.w_c.to_string()),
            ("loss.w_d", self.loss.w_d.to_string()),
            ("loss.horizon", opt_str(&self.loss.horizon)),
            (
                "loss.zeta",
                match self.loss.zeta {
                    Zeta::Constant => "constant".into(),
                    Zeta::Linear => "linear".into(),
                    Zeta::Quadratic => "quadratic".into(),
                    Zeta::LastK(k) => format!("last:{k}"),
                },
            ),
            ("loss.aux_samples", self.loss.aux_samples.to_string()),
            ("loss.rebase_positions", self.loss.rebase_positions.to_string()),
            ("loss.w_p", self.loss.w_p.to_string()),
            ("loss.w_pd", self.loss.w_pd.to_string()),
            ("loss.dist_pairs", self.loss.dist_pairs.to_string()),
            ("vae.beta_y", self.vae.beta_y.to_string()),
        ]);
        match self.vae.kernel {
            KernelKind::RbfMix { nu, lambda_frac } => {
                e.push(("vae.kernel", "rbf_mix".into()));
                e.push(("vae.nu", nu.to_string()));
                e.push(("vae.lambda_frac", lambda_frac.to_string()));
            }
            KernelKind::FewShot { epsilon } => {
                e.push(("vae.kernel", "fewshot".into()));
                e.push(("vae.epsilon", epsilon.to_string()));
            }
        }
        let o = &self.optim;
        e.extend([
            ("optim.lr", o.lr.to_string()),
            ("optim.warmup", o.warmup.to_string()),
            ("optim.total_steps", o.total_steps.to_string()),
            ("optim.batch", o.batch.to_string()),
            ("optim.beta1", o.beta1.to_string()),
            ("optim.beta2", o.beta2.to_string()),
            ("optim.eps", o.eps.to_string()),
            ("optim.weight_decay", o.weight_decay.to_string()),
            ("optim.clip", opt_str(&o.clip)),
            ("train.eval_every", self.train.eval_every.to_string()),
            ("train.eval_batches", self.train.eval_batches.to_string()),
            ("train.checkpoint_every", self.train.checkpoint_every.to_string()),
        ]);
        match &self.data {
            DataSpec::Icl(s) => e.extend([
                ("data.kind", "icl".into()),
                ("data.n_tasks", s.n_tasks.to_string()),
                ("data.n_ex", s.n_ex.to_string()),
                ("data.digits", s.digits.to_string()),
            ]),
            DataSpec::LinReg(s) => e.extend([
                ("data.kind", "linreg".into()),
                ("data.d_in", s.d_in.to_string()),
                ("data.d_out", s.d_out.to_string()),
                ("data.n_pairs", s.n_pairs.to_string()),
                ("data.noise", s.noise.to_string()),
            ]),
            DataSpec::Text(s) => e.extend([
                ("data.kind", "text".into()),
                (
                    "data.corpus",
                    s.corpus.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(","),
                ),
                ("data.l_max", s.l_max.to_string()),
                ("data.l_start", s.l_start.to_string()),
                ("data.l_finish", s.l_finish.to_string()),
                ("data.n_excerpts", s.n_excerpts.to_string()),
                ("data.split_lines", s.split_lines.to_string()),
            ]),
        }
        e.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Apply `key=value` lines; blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CgtError::config(line, format!("line {}: expected key=value", i + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CgtError::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(0.0..=1.0).contains(&self.loss.eta) {
            return Err(CgtError::config("loss.eta", "must be in [0, 1]"));
        }
        if self.loss.w_c < 0.0 || self.loss.w_d < 0.0 {
            return Err(CgtError::config("loss.w_c", "regularizer weights must be non-negative"));
        }
        if self.loss.aux_samples == 0 {
            return Err(CgtError::config("loss.aux_samples", "must be at least 1"));
        }
        if let Zeta::LastK(0) = self.loss.zeta {
            return Err(CgtError::config("loss.zeta", "last:K needs K >= 1"));
        }
        if self.optim.warmup > self.optim.total_steps {
            return Err(CgtError::config("optim.warmup", "exceeds optim.total_steps"));
        }
        if self.optim.batch == 0 {
            return Err(CgtError::config("optim.batch", "must be positive"));
        }
        if self.model.vae && self.vae.beta_y <= 0.0 {
            return Err(CgtError::config("vae.beta_y", "must be positive"));
        }
        self.data.validate()?;
        let seq = self.data.seq_len();
        if seq > self.model.max_seq_len {
            return Err(CgtError::SequenceTooLong { len: seq, max: self.model.max_seq_len });
        }
        match (&self.data, self.model.input_mode) {
            (DataSpec::LinReg(s), InputMode::Continuous { d_in, d_out }) if s.d_in == d_in && s.d_out == d_out => {}
            (DataSpec::LinReg(_), _) => {
                return Err(CgtError::config("data.kind", "linreg needs model.input_mode=continuous with matching d_in/d_out"))
            }
            (_, InputMode::Continuous { .. }) => {
                return Err(CgtError::config("model.input_mode", "continuous input requires data.kind=linreg"))
            }
            (d, InputMode::Token) if d.vocab_size() > self.model.vocab_size => {
                return Err(CgtError::config("model.vocab_size", format!("dataset needs {}", d.vocab_size())))
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.apply_text("model.dim_x=64\nloss.zeta=last:14\noptim.clip=1.5\ndata.kind=linreg\ndata.noise=0.2\nvae.kernel=fewshot\nvae.epsilon=0.5")
            .unwrap();
        let back = RunConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_text("model.dim_z=3").unwrap_err();
        assert!(matches!(err, CgtError::UnknownKey(ref k) if k == "model.dim_z"), "{err}");
        let err = RunConfig::from_text("data.kind=icl\ndata.noise=0.1").unwrap_err();
        assert!(matches!(err, CgtError::UnknownKey(ref k) if k == "data.noise"));
    }

    #[test]
    fn defaults_match_reference_icl_model() {
        let c = RunConfig::default();
        let m = &c.model;
        assert_eq!((m.n_layers, m.readout_layer, m.dim_x, m.dim_y), (6, 4, 112, 64));
        assert_eq!((m.heads_x, m.heads_y, m.rank, m.n_templates), (7, 4, 4, 16));
        assert_eq!((c.loss.w_c, c.loss.w_d, c.loss.eta), (0.08, 0.04, 0.5));
        assert_eq!(c.optim.weight_decay, 1e-8);
        assert_eq!(m.n_slots(), 4);
        c.validate().unwrap();
    }

    #[test]
    fn validation_rejects_bad_heads() {
        let mut m = ModelConfig::default();
        m.heads_x = 5;
        assert!(m.validate().is_err());
        let mut m = ModelConfig::default();
        m.readout_layer = m.n_layers;
        assert!(m.validate().is_err());
    }
}
