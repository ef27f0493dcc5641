use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use cgt_core::analysis::{
    self, answer_accuracy, document_embedding, dot_product_matrix, linreg_eval, probe_report, score_answer, trace_rows,
    variation_report, AccuracyReport, EvalMode, Segment, Tally,
};
use cgt_core::checkpoint::Checkpoint;
use cgt_core::datasets::icl::IclSequence;
use cgt_core::datasets::vocab::{byte_encode, icl_encode};
use cgt_core::datasets::{DataSpec, Dataset, Sample};
use cgt_core::gp::{build_kernel, mc_covariance_oracle, KernelSpec};
use cgt_core::model::{Cgt, Input};
use cgt_core::objectives::next_token_targets;
use cgt_core::specialize::{capture_context, context_trace, fold, freeze_and_run, run_dynamic, run_plain, specialize_checkpoint};
use cgt_core::train::{train as run_training, EVAL_OFFSET};
use cgt_core::{ModelConfig, RunConfig};
use cgt_tensor::{stream_rng, Float, Stream, Tensor};
use rand::Rng;

fn apply_sets(cfg: &mut RunConfig, sets: &[String], seed: Option<u64>) -> Result<()> {
    for s in sets {
        let (k, v) = s.split_once('=').with_context(|| format!("override `{s}` is not KEY=VALUE"))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn run_name(ck: &Path) -> String {
    ck.parent().and_then(|p| p.file_name()).map_or_else(|| "run".into(), |n| n.to_string_lossy().into_owned())
}

pub fn train(config: &Path, sets: &[String], seed: Option<u64>, log_every: usize) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    apply_sets(&mut cfg, sets, seed)?;
    let start = std::time::Instant::now();
    let out = run_training(&cfg, |r| {
        if log_every > 0 && (r.step % log_every == 0) {
            let l = &r.loss;
            eprintln!(
                "step {:>6}  total {:.4}  ce {:.4}  aux {:.4}  rc {:.4}  rd {:.4}  lr {:.2e}  {:.0}s",
                r.step,
                l.total,
                l.lce,
                l.laux,
                l.rc,
                l.rd,
                r.lr,
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    for e in &out.evals {
        eprintln!("eval step {}: lce {:.4} accuracy {}", e.step, e.lce, e.accuracy.map_or("-".into(), |a| format!("{a:.4}")));
    }
    println!("{}", out.run_dir.display());
    Ok(())
}

fn load(checkpoint: &Path, sets: &[String], seed: Option<u64>) -> Result<(Checkpoint, RunConfig)> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut cfg = ck.config.clone();
    apply_sets(&mut cfg, sets, seed)?;
    cfg.model = ck.config.model.clone();
    Ok((ck, cfg))
}

fn eval_samples(cfg: &RunConfig, count: usize) -> Result<Vec<Sample>> {
    let data = Dataset::open(&cfg.data)?;
    Ok(data.batch(cfg.seed, EVAL_OFFSET, count))
}

/// Answer accuracy of a model whose context is fixed for every sequence.
fn fixed_context_accuracy(model: &Cgt<f32>, y: Option<&[f64]>, seqs: &[IclSequence]) -> Result<AccuracyReport> {
    let v = model.cfg.vocab_size;
    let mut all = Tally::default();
    for chunk in seqs.chunks(16) {
        let tokens: Vec<Vec<usize>> = chunk.iter().map(|s| s.tokens.clone()).collect();
        let logits = match y {
            Some(y) => freeze_and_run(model, y, Input::Tokens(&tokens), None)?,
            None => run_plain(model, Input::Tokens(&tokens), None)?,
        };
        let n = tokens[0].len();
        for (b, seq) in chunk.iter().enumerate() {
            let l = &logits.data()[b * n * v..(b + 1) * n * v];
            for ex in seq.tasks.iter().flat_map(|t| &t.examples) {
                let t = score_answer(l, v, &seq.tokens, ex.answer.clone());
                all.answers += t.answers;
                all.correct += t.correct;
                all.tokens += t.tokens;
                all.tokens_correct += t.tokens_correct;
            }
        }
    }
    Ok(AccuracyReport { mode: EvalMode::Frozen, segments: vec![(Segment::All, all)] })
}

fn parse_mode(mode: &str) -> Result<(EvalMode, Option<usize>)> {
    Ok(match mode.split_once('@') {
        None => match mode {
            "dynamic" => (EvalMode::Dynamic, None),
            "frozen" => (EvalMode::Frozen, None),
            "folded" => (EvalMode::Folded, None),
            _ => bail!("unknown mode `{mode}`"),
        },
        Some(("frozen", k)) => (EvalMode::Frozen, Some(k.parse().context("frozen@K needs an integer")?)),
        Some(("moving-average", g)) => (EvalMode::MovingAverage(g.parse().context("moving-average@GAMMA needs a number")?), None),
        _ => bail!("unknown mode `{mode}`"),
    })
}

/// Mean next-token loss over `tokens[s..]` with the context frozen at `s`
/// (1-based), or of the dynamic model over all positions.
fn text_loss(model: &Cgt<f32>, seqs: &[Vec<usize>], split: Option<usize>) -> Result<f64> {
    let v = model.cfg.vocab_size;
    let mut total = 0.0;
    let mut count = 0usize;
    for seq in seqs {
        let (logits, toks) = match split {
            None => (run_dynamic(model, Input::Tokens(&[seq.clone()]))?, seq.clone()),
            Some(s) => {
                let y = capture_context(model, Input::Tokens(&[seq.clone()]), s)?;
                let suffix = seq[s..].to_vec();
                (freeze_and_run(model, &y, Input::Tokens(&[suffix.clone()]), None)?, suffix)
            }
        };
        for (t, target) in next_token_targets(&[toks]).into_iter().enumerate() {
            if let Some(target) = target {
                let row = &logits.data()[t * v..(t + 1) * v];
                let mx = row.iter().map(|x| x.to_f64_lossy()).fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + row.iter().map(|x| (x.to_f64_lossy() - mx).exp()).sum::<f64>().ln();
                total += lse - row[target].to_f64_lossy();
                count += 1;
            }
        }
    }
    Ok(total / count.max(1) as f64)
}

pub fn eval(checkpoint: &Path, mode: &str, count: usize, sets: &[String], seed: Option<u64>, out: &Path) -> Result<()> {
    let (ck, cfg) = load(checkpoint, sets, seed)?;
    let model: Cgt<f32> = ck.model();
    let run = run_name(checkpoint);
    mkdir(out)?;
    let samples = eval_samples(&cfg, count)?;
    let (mode, at) = parse_mode(mode)?;

    if ck.specialized {
        let seqs: Vec<IclSequence> = samples.iter().filter_map(Sample::as_icl).cloned().collect();
        if seqs.is_empty() {
            bail!("specialized evaluation needs arithmetic data");
        }
        let prov = ck.provenance.as_ref().context("specialized checkpoint without provenance")?;
        let y = if prov.folded { None } else { Some(prov.y.as_slice()) };
        let rep = fixed_context_accuracy(&model, y, &seqs)?;
        analysis::write_accuracy_csv(&out.join("accuracy.csv"), &run, &[rep.clone()])?;
        println!("specialized accuracy {:.4}", rep.segments[0].1.accuracy());
        return Ok(());
    }

    match &cfg.data {
        DataSpec::Icl(_) => {
            if at.is_some() {
                bail!("frozen@K is for regression and text data; arithmetic data freezes at the end of the first two examples");
            }
            let seqs: Vec<IclSequence> = samples.iter().filter_map(Sample::as_icl).cloned().collect();
            let rep = answer_accuracy(&model, &seqs, mode)?;
            analysis::write_accuracy_csv(&out.join("accuracy.csv"), &run, &[rep.clone()])?;
            for (seg, t) in &rep.segments {
                println!("{} {} accuracy {:.4} ± {:.4} (per token {:.4})", mode.name(), seg.name(), t.accuracy(), t.stderr(), t.token_accuracy());
            }
            if mode == EvalMode::Dynamic {
                let var = variation_report(&model, &seqs)?;
                analysis::write_variation_csv(&out.join("variation.csv"), &run, &var)?;
                println!("variation {:.4} ± {:.4}", var.mean, var.err3);
            }
        }
        DataSpec::LinReg(spec) => {
            let k = match (mode, at) {
                (EvalMode::Frozen | EvalMode::Dynamic, Some(k)) => k,
                (EvalMode::Frozen | EvalMode::Dynamic, None) => spec.n_pairs / 2,
                _ => bail!("regression data supports dynamic and frozen@K"),
            };
            let seqs: Vec<_> = samples.iter().filter_map(Sample::as_linreg).cloned().collect();
            let rep = linreg_eval(&model, &seqs, k, cgt_core::datasets::linreg::RIDGE_LAMBDA)?;
            write(&out.join("linreg.csv"), &format!("run,k,specialized,dynamic,ridge\n{run},{k},{},{},{}\n", rep.specialized, rep.dynamic, rep.ridge))?;
            println!("after {k} pairs: specialized {:.4} dynamic {:.4} ridge {:.4}", rep.specialized, rep.dynamic, rep.ridge);
        }
        DataSpec::Text(_) => {
            let split = match (mode, at) {
                (EvalMode::Dynamic, None) => None,
                (EvalMode::Frozen, Some(s)) => Some(s),
                _ => bail!("text data supports dynamic and frozen@S"),
            };
            let seqs: Vec<Vec<usize>> = samples.iter().filter_map(|s| s.tokens().map(<[usize]>::to_vec)).collect();
            let lce = text_loss(&model, &seqs, split)?;
            write(&out.join("text_eval.csv"), &format!("run,mode,lce\n{run},{},{lce}\n", split.map_or("dynamic".into(), |s| format!("frozen@{s}"))))?;
            println!("loss {lce:.4}");
        }
    }
    Ok(())
}

pub fn specialize(checkpoint: &Path, prefix: Option<String>, prefix_file: Option<PathBuf>, freeze_at: Option<usize>, do_fold: bool, out: &Path) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    if ck.specialized {
        bail!("{} is already specialized", checkpoint.display());
    }
    let text = match (prefix, prefix_file) {
        (Some(p), _) => p.into_bytes(),
        (None, Some(f)) => std::fs::read(&f).with_context(|| format!("reading {}", f.display()))?,
        (None, None) => bail!("give --prefix or --prefix-file"),
    };
    let tokens = match &ck.config.data {
        DataSpec::Icl(_) => icl_encode(std::str::from_utf8(&text).context("prefix is not UTF-8")?.trim_end())?,
        DataSpec::Text(_) => byte_encode(&text),
        DataSpec::LinReg(_) => bail!("regression models take vector prefixes; use the library API"),
    };
    let s = freeze_at.unwrap_or(tokens.len());
    let special = specialize_checkpoint(&ck, &tokens, s, do_fold)?;
    special.save(out)?;
    println!(
        "wrote {} ({} parameters, source {})",
        out.display(),
        special.params.num_scalars(),
        special.provenance.as_ref().map_or("", |p| &p.source[..12])
    );
    Ok(())
}

fn icl_samples(cfg: &RunConfig, count: usize) -> Result<Vec<IclSequence>> {
    let seqs: Vec<IclSequence> = eval_samples(cfg, count)?.iter().filter_map(Sample::as_icl).cloned().collect();
    if seqs.is_empty() {
        bail!("this command needs arithmetic data (data.kind=icl)");
    }
    Ok(seqs)
}

pub fn probe(checkpoint: &Path, count: usize, train: usize, seed: Option<u64>, out: &Path) -> Result<()> {
    let (ck, cfg) = load(checkpoint, &[], seed)?;
    if ck.specialized {
        bail!("probing needs the context pathway");
    }
    let model: Cgt<f32> = ck.model();
    let run = run_name(checkpoint);
    mkdir(out)?;
    let seqs = icl_samples(&cfg, count)?;
    if train >= seqs.len() {
        bail!("--train {train} leaves no held-out sequences out of {}", seqs.len());
    }
    let p = probe_report(&model, &seqs, train)?;
    if p.underdetermined {
        eprintln!("warning: fewer probe samples than features; the fit relies on the ridge term");
    }
    analysis::write_probe_csv(&out.join("probe.csv"), &run, &p)?;
    let v = variation_report(&model, &seqs)?;
    analysis::write_variation_csv(&out.join("variation.csv"), &run, &v)?;
    println!("probe mae a {:.4} b {:.4} mean {:.4}; variation {:.4}", p.mae[0], p.mae[1], p.mean_mae(), v.mean);
    Ok(())
}

pub fn dump(checkpoint: &Path, count: usize, sets: &[String], seed: Option<u64>, out: &Path) -> Result<()> {
    let (ck, cfg) = load(checkpoint, sets, seed)?;
    if ck.specialized {
        bail!("dumping context traces needs the context pathway");
    }
    let model: Cgt<f32> = ck.model();
    mkdir(out)?;
    let data = Dataset::open(&cfg.data)?;
    let samples = data.batch(cfg.seed, EVAL_OFFSET, count);
    let mut embeddings = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let trace = match s {
            Sample::LinReg(l) => {
                let width = l.xs[0].len().max(l.ys[0].len());
                let flat: Vec<f64> = l.inputs(width).into_iter().flatten().collect();
                let t = Tensor::<f32>::from_f64(&[1, 2 * l.xs.len(), width], &flat)?;
                context_trace(&model, Input::Vectors(&t))?
            }
            _ => context_trace(&model, Input::Tokens(&[s.tokens().expect("token sample").to_vec()]))?,
        };
        let rows = trace_rows(&trace, 0);
        analysis::write_dotmat_csv(&out.join(format!("dotmat_{i}.csv")), &dot_product_matrix(&rows), rows.len())?;
        if !matches!(cfg.data, DataSpec::Text(_)) {
            let label = match s {
                Sample::Icl(q) => q.tasks.iter().map(|t| format!("{:.3}/{:.3}", t.a, t.b)).collect::<Vec<_>>().join(" "),
                _ => "sequence".into(),
            };
            let (v, short) = document_embedding(&rows);
            embeddings.push((i.to_string(), label, v, short));
        }
    }
    if let Some(corpus) = data.corpus() {
        for (d, doc) in corpus.docs.iter().enumerate() {
            let take = doc.len().min(model.cfg.max_seq_len);
            let trace = context_trace(&model, Input::Tokens(&[byte_encode(&doc[..take])]))?;
            let (v, short) = document_embedding(&trace_rows(&trace, 0));
            let label = corpus.files[corpus.origin[d]].file_name().map_or_else(String::new, |n| n.to_string_lossy().replace(',', "_"));
            embeddings.push((d.to_string(), label, v, short));
        }
    }
    analysis::write_embeddings_csv(&out.join("embeddings.csv"), &embeddings)?;
    println!("wrote {} dot-product matrices and {} embeddings to {}", samples.len(), embeddings.len(), out.display());
    Ok(())
}

pub fn gen_data(config: &Path, count: usize, sets: &[String], seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    apply_sets(&mut cfg, sets, seed)?;
    Dataset::open(&cfg.data)?.dump(cfg.seed, count, out)?;
    println!("wrote {count} samples to {}", out.display());
    Ok(())
}

fn random_config<R: Rng>(rng: &mut R) -> ModelConfig {
    let heads = [1, 2, 4][rng.random_range(0..3)];
    let n_layers = rng.random_range(2..5);
    ModelConfig {
        n_layers,
        readout_layer: rng.random_range(1..n_layers),
        dim_x: heads * rng.random_range(2..5),
        dim_y: 2 * rng.random_range(1..4),
        heads_x: heads,
        heads_y: 2,
        mlp_mult: rng.random_range(1..4),
        rank: rng.random_range(1..4),
        n_templates: rng.random_range(1..5),
        mixing: if rng.random_bool(0.5) { cgt_core::Mixing::Tanh } else { cgt_core::Mixing::Softmax },
        vocab_size: 16,
        max_seq_len: 24,
        init_std: 0.2,
        ..ModelConfig::default()
    }
}

/// Largest `|frozen − folded|` over random (model, context, suffix) draws.
fn fold_gap<T: Float>(models: usize, suffixes: usize, seed: u64) -> Result<f64> {
    let mut worst = 0.0f64;
    for m in 0..models {
        let mut rng = stream_rng(seed, Stream::Oracle, 1000 + m as u64);
        let cfg = random_config(&mut rng);
        let dy = cfg.dim_y;
        let model = Cgt::<T>::new(cfg, seed.wrapping_add(m as u64))?;
        for _ in 0..suffixes {
            let y: Vec<f64> = (0..dy).map(|_| rng.random_range(-2.0..2.0)).collect();
            let len = rng.random_range(1..24);
            let suffix = vec![(0..len).map(|_| rng.random_range(0..16)).collect::<Vec<usize>>()];
            let frozen = freeze_and_run(&model, &y, Input::Tokens(&suffix), None)?;
            let folded = run_plain(&fold(&model, &y)?, Input::Tokens(&suffix), None)?;
            worst = worst.max(frozen.max_abs_diff(&folded));
        }
    }
    Ok(worst)
}

pub fn oracle(draws: usize, models: usize, suffixes: usize, seed: u64, out: Option<&Path>) -> Result<()> {
    let (n, eps) = (32, 0.5);
    let mc = mc_covariance_oracle(eps, n, draws, &mut stream_rng(seed, Stream::Oracle, 0));
    let k = build_kernel(&KernelSpec::FewShot { epsilon: eps }, n)?;
    let mut within = 0;
    let mut worst_z = 0.0f64;
    for i in 0..n * n {
        let z = (mc.cov[i] - k.k[i]).abs() / mc.se[i];
        worst_z = worst_z.max(z);
        within += (z <= 3.0) as usize;
    }
    let f64_gap = fold_gap::<f64>(models, suffixes, seed)?;
    let f32_gap = fold_gap::<f32>(models, suffixes, seed)?;
    let mut report = String::from("oracle,value,threshold,pass\n");
    let kernel_ok = within == n * n;
    writeln!(report, "kernel_entries_within_3se,{within},{},{kernel_ok}", n * n)?;
    writeln!(report, "kernel_max_z,{worst_z},3,{kernel_ok}")?;
    writeln!(report, "fold_f64_max_abs,{f64_gap},1e-10,{}", f64_gap < 1e-10)?;
    writeln!(report, "fold_f32_max_abs,{f32_gap},1e-5,{}", f32_gap < 1e-5)?;
    print!("{report}");
    if let Some(p) = out {
        write(p, &report)?;
    }
    if !(kernel_ok && f64_gap < 1e-10 && f32_gap < 1e-5) {
        bail!("oracle mismatch");
    }
    Ok(())
}
