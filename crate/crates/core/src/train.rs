//! Seeded end-to-end training with per-step loss logging, periodic
//! evaluation and checkpointing.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use cgt_tensor::{cosine_lr, stream_rng, Adam, AdamConfig, Graph, Stream, Tensor};

use crate::analysis::{answer_accuracy, EvalMode, Segment};
use crate::checkpoint::{build_id, Checkpoint};
use crate::config::{KernelKind, RunConfig};
use crate::datasets::{Dataset, Sample};
use crate::error::{CgtError, Result};
use crate::gp::{build_kernel, KernelMatrix, KernelSpec};
use crate::model::Cgt;
use crate::objectives::{joint_loss, Batch, LossRngs, LossValues, VaeTerm};

/// Index offset separating evaluation samples from training samples.
pub const EVAL_OFFSET: u64 = 1 << 48;

pub const LOSS_HEADER: &str = "step,lce,laux,rc,rd,kl,rp,total,lr";

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub lr: f64,
    pub loss: LossValues,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub step: usize,
    pub lce: f64,
    /// Dynamic whole-answer accuracy on E₂ for arithmetic data.
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub steps: usize,
    pub last: Option<LossValues>,
    pub evals: Vec<EvalReport>,
    pub model: Cgt<f32>,
}

pub fn kernel_spec(kind: KernelKind) -> KernelSpec {
    match kind {
        KernelKind::RbfMix { nu, lambda_frac } => KernelSpec::RbfMix { nu, lambda_frac },
        KernelKind::FewShot { epsilon } => KernelSpec::FewShot { epsilon },
    }
}

/// Token batches are cut to their shortest member.
fn make_batch(samples: &[Sample]) -> Result<Batch<f32>> {
    let mut batch = Batch::from_samples(samples)?;
    if let Batch::Tokens(seqs) = &mut batch {
        let n = seqs.iter().map(Vec::len).min().unwrap_or(0);
        seqs.iter_mut().for_each(|s| s.truncate(n));
    }
    Ok(batch)
}

struct Kernels {
    kind: KernelKind,
    cache: HashMap<usize, KernelMatrix>,
}

impl Kernels {
    fn get(&mut self, n: usize) -> Result<&KernelMatrix> {
        if !self.cache.contains_key(&n) {
            self.cache.insert(n, build_kernel(&kernel_spec(self.kind), n)?);
        }
        Ok(&self.cache[&n])
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CgtError::io(path, e))
}

/// Mean next-token loss and, for arithmetic data, dynamic E₂ accuracy on
/// `batches` held-out batches.
pub fn evaluate(model: &Cgt<f32>, cfg: &RunConfig, data: &Dataset, step: usize) -> Result<EvalReport> {
    let b = cfg.optim.batch;
    let mut lce = 0.0;
    let mut icl = Vec::new();
    let eval_cfg = crate::config::LossConfig { eta: 1.0, w_c: 0.0, w_d: 0.0, w_p: 0.0, w_pd: 0.0, ..cfg.loss.clone() };
    for i in 0..cfg.train.eval_batches {
        let samples = data.batch(cfg.seed, EVAL_OFFSET + (i * b) as u64, b);
        icl.extend(samples.iter().filter_map(Sample::as_icl).cloned());
        let batch = make_batch(&samples)?;
        let mut g = Graph::new();
        let (mut a, mut v) = (stream_rng(cfg.seed, Stream::Eval, i as u64), stream_rng(cfg.seed, Stream::Eval, i as u64));
        let parts = joint_loss(&mut g, model, &batch, &eval_cfg, None, LossRngs { aux: &mut a, vae: &mut v })?;
        lce += parts.values(&g).lce;
    }
    let accuracy = if icl.is_empty() {
        None
    } else {
        answer_accuracy(model, &icl, EvalMode::Dynamic)?.get(Segment::E2).map(|t| t.accuracy())
    };
    Ok(EvalReport { step, lce: lce / cfg.train.eval_batches.max(1) as f64, accuracy })
}

/// Train from scratch according to `cfg`, writing into `cfg.output_dir`:
/// `config.txt`, `build.txt`, `loss.csv`, `eval.csv`, `last.ckpt`,
/// `best.ckpt` and `final.ckpt`. A non-finite loss or gradient aborts with
/// `last.ckpt` holding the most recent good parameters.
pub fn train(cfg: &RunConfig, mut on_step: impl FnMut(&StepReport)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| CgtError::io(&dir, e))?;
    write_text(&dir.join("config.txt"), &cfg.to_text())?;
    write_text(&dir.join("build.txt"), &format!("build={}\nseed={}\n", build_id(), cfg.seed))?;

    let data = Dataset::open(&cfg.data)?;
    let mut model = Cgt::<f32>::new(cfg.model.clone(), cfg.seed)?;
    let o = &cfg.optim;
    let mut adam = Adam::new(AdamConfig { beta1: o.beta1, beta2: o.beta2, eps: o.eps, weight_decay: o.weight_decay, clip_norm: o.clip });
    let mut kernels = Kernels { kind: cfg.vae.kernel, cache: HashMap::new() };

    let loss_path = dir.join("loss.csv");
    let mut loss_csv = std::io::BufWriter::new(std::fs::File::create(&loss_path).map_err(|e| CgtError::io(&loss_path, e))?);
    writeln!(loss_csv, "{LOSS_HEADER}").map_err(|e| CgtError::io(&loss_path, e))?;
    let mut eval_csv = String::from("step,lce,accuracy\n");
    let mut evals = Vec::new();
    let mut best = f64::INFINITY;
    let mut last = None;
    Checkpoint::from_model(&model, cfg, 0).save(&dir.join("last.ckpt"))?;

    for step in 0..o.total_steps {
        let samples = data.batch(cfg.seed, (step * o.batch) as u64, o.batch);
        let batch = make_batch(&samples)?;
        let n = batch.seq_len();
        let mut g = Graph::new();
        let vae = if cfg.model.vae { Some(VaeTerm { beta: cfg.vae.beta_y, kernel: kernels.get(n)? }) } else { None };
        let (mut a, mut v) = (stream_rng(cfg.seed, Stream::Aux, step as u64), stream_rng(cfg.seed, Stream::Vae, step as u64));
        let parts = joint_loss(&mut g, &model, &batch, &cfg.loss, vae, LossRngs { aux: &mut a, vae: &mut v })?;
        let values = parts.values(&g);
        if !values.total.is_finite() {
            loss_csv.flush().map_err(|e| CgtError::io(&loss_path, e))?;
            return Err(CgtError::NonFiniteLoss { step });
        }
        let grads = g.backward(parts.total)?;
        let named: Vec<(String, Tensor<f32>)> =
            g.bound_params().iter().filter_map(|(name, var)| grads.get(*var).map(|t| (name.clone(), t))).collect();
        let lr = cosine_lr(step, o.warmup, o.total_steps, o.lr)?;
        if adam.step(&mut model.params, &named, lr).is_err() {
            loss_csv.flush().map_err(|e| CgtError::io(&loss_path, e))?;
            return Err(CgtError::NonFiniteLoss { step });
        }
        let mut row = String::new();
        writeln!(row, "{step},{},{},{},{},{},{},{},{lr}", values.lce, values.laux, values.rc, values.rd, values.kl, values.rp, values.total)
            .expect("string write");
        loss_csv.write_all(row.as_bytes()).map_err(|e| CgtError::io(&loss_path, e))?;
        let report = StepReport { step, lr, loss: values };
        on_step(&report);
        last = Some(values);

        let done = step + 1;
        if cfg.train.checkpoint_every > 0 && done % cfg.train.checkpoint_every == 0 {
            Checkpoint::from_model(&model, cfg, done).save(&dir.join("last.ckpt"))?;
        }
        if cfg.train.eval_every > 0 && (done % cfg.train.eval_every == 0 || done == o.total_steps) {
            let e = evaluate(&model, cfg, &data, done)?;
            writeln!(eval_csv, "{},{},{}", e.step, e.lce, e.accuracy.map_or(String::new(), |a| a.to_string())).expect("string write");
            write_text(&dir.join("eval.csv"), &eval_csv)?;
            if e.lce < best {
                best = e.lce;
                Checkpoint::from_model(&model, cfg, done).save(&dir.join("best.ckpt"))?;
            }
            evals.push(e);
        }
    }
    loss_csv.flush().map_err(|e| CgtError::io(&loss_path, e))?;
    Checkpoint::from_model(&model, cfg, o.total_steps).save(&dir.join("last.ckpt"))?;
    Checkpoint::from_model(&model, cfg, o.total_steps).save(&dir.join("final.ckpt"))?;
    Ok(TrainOutcome { run_dir: dir, steps: o.total_steps, last, evals, model })
}
