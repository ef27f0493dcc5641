//! Evaluation metrics and representation diagnostics: answer accuracy, the
//! representation-variation metric, linear probes of task parameters,
//! dot-product matrices and embedding export.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use cgt_tensor::{Float, Tensor};
use nalgebra::DMatrix;

use crate::datasets::icl::IclSequence;
use crate::datasets::linreg::{l2, ridge_error, LinRegSequence};
use crate::error::{CgtError, Result};
use crate::model::{Cgt, Input};
use crate::specialize::{context_trace, fold, freeze_and_run, moving_average_run, run_dynamic, run_plain};

/// Ridge term of the linear probe.
pub const PROBE_RIDGE: f64 = 1e-6;
/// Trailing context vectors averaged per document embedding.
pub const EMBED_WINDOW: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EvalMode {
    Dynamic,
    /// Context frozen at the end of the first two examples of each task,
    /// which are then removed.
    Frozen,
    /// As `Frozen`, through a folded model per task.
    Folded,
    /// Modulators see the moving average of the context, seeded with the
    /// context computed at the first position.
    MovingAverage(f64),
}

impl EvalMode {
    pub fn name(&self) -> String {
        match self {
            EvalMode::Dynamic => "dynamic".into(),
            EvalMode::Frozen => "frozen".into(),
            EvalMode::Folded => "folded".into(),
            EvalMode::MovingAverage(g) => format!("moving-average@{g}"),
        }
    }

    pub fn is_specialized(&self) -> bool {
        matches!(self, EvalMode::Frozen | EvalMode::Folded)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Segment {
    E1,
    E2,
    All,
}

impl Segment {
    pub fn name(&self) -> &'static str {
        match self {
            Segment::E1 => "E1",
            Segment::E2 => "E2",
            Segment::All => "all",
        }
    }
}

/// Whole-answer and per-token hit counts.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Tally {
    pub answers: usize,
    pub correct: usize,
    pub tokens: usize,
    pub tokens_correct: usize,
}

impl Tally {
    pub fn accuracy(&self) -> f64 {
        if self.answers == 0 {
            0.0
        } else {
            self.correct as f64 / self.answers as f64
        }
    }

    /// Binomial standard error of `accuracy`.
    pub fn stderr(&self) -> f64 {
        if self.answers == 0 {
            return 0.0;
        }
        let p = self.accuracy();
        (p * (1.0 - p) / self.answers as f64).sqrt()
    }

    pub fn token_accuracy(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            self.tokens_correct as f64 / self.tokens as f64
        }
    }

    fn merge(&mut self, o: Tally) {
        self.answers += o.answers;
        self.correct += o.correct;
        self.tokens += o.tokens;
        self.tokens_correct += o.tokens_correct;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyReport {
    pub mode: EvalMode,
    pub segments: Vec<(Segment, Tally)>,
}

impl AccuracyReport {
    pub fn get(&self, seg: Segment) -> Option<Tally> {
        self.segments.iter().find(|(s, _)| *s == seg).map(|(_, t)| *t)
    }
}

fn argmax<T: Float>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Score the answer occupying `answer` (positions within `tokens`) given
/// `logits[n, V]` over the same positions; token `p` is predicted at `p − 1`.
pub fn score_answer<T: Float>(logits: &[T], vocab: usize, tokens: &[usize], answer: Range<usize>) -> Tally {
    let mut hits = 0;
    let len = answer.len();
    for p in answer {
        if argmax(&logits[(p - 1) * vocab..p * vocab]) == tokens[p] {
            hits += 1;
        }
    }
    Tally { answers: 1, correct: (hits == len) as usize, tokens: len, tokens_correct: hits }
}

/// Sequences per forward pass in evaluation.
const EVAL_CHUNK: usize = 16;

/// Greedy teacher-forced answer accuracy. Dynamic and moving-average modes
/// report E1, E2 and all answers; specialized modes report E2 only.
pub fn answer_accuracy<T: Float>(model: &Cgt<T>, seqs: &[IclSequence], mode: EvalMode) -> Result<AccuracyReport> {
    let v = model.cfg.vocab_size;
    let mut e1 = Tally::default();
    let mut e2 = Tally::default();
    let mut all = Tally::default();
    for chunk in seqs.chunks(EVAL_CHUNK) {
        if mode.is_specialized() {
            // one row per task: context at the end of E1, suffix from E2 to the task end
            let mut ys = Vec::new();
            let mut suffixes = Vec::new();
            let mut answers = Vec::new();
            let tokens: Vec<Vec<usize>> = chunk.iter().map(|s| s.tokens.clone()).collect();
            let trace = context_trace(model, Input::Tokens(&tokens))?;
            let (n, dy) = (trace.shape()[1], trace.shape()[2]);
            for (bi, seq) in chunk.iter().enumerate() {
                for task in &seq.tasks {
                    let row = bi * n + task.e1.end - 1;
                    ys.extend(trace.data()[row * dy..(row + 1) * dy].iter().map(|x| x.to_f64_lossy()));
                    let start = task.e2.start;
                    suffixes.push(seq.tokens[start..task.span.end].to_vec());
                    let spans: Vec<Range<usize>> = task
                        .examples
                        .iter()
                        .filter(|e| e.span.start >= start)
                        .map(|e| e.answer.start - start..e.answer.end - start)
                        .collect();
                    answers.push(spans);
                }
            }
            let width = suffixes[0].len();
            let logits = match mode {
                EvalMode::Frozen => freeze_and_run(model, &ys, Input::Tokens(&suffixes), None)?,
                _ => {
                    let mut data = Vec::with_capacity(suffixes.len() * width * v);
                    for (i, s) in suffixes.iter().enumerate() {
                        let folded = fold(model, &ys[i * dy..(i + 1) * dy])?;
                        data.extend_from_slice(run_plain(&folded, Input::Tokens(&[s.clone()]), None)?.data());
                    }
                    Tensor::new(vec![suffixes.len(), width, v], data)?
                }
            };
            for (i, (s, spans)) in suffixes.iter().zip(&answers).enumerate() {
                let l = &logits.data()[i * width * v..(i + 1) * width * v];
                for a in spans {
                    e2.merge(score_answer(l, v, s, a.clone()));
                }
            }
        } else {
            let tokens: Vec<Vec<usize>> = chunk.iter().map(|s| s.tokens.clone()).collect();
            let logits = match mode {
                EvalMode::Dynamic => run_dynamic(model, Input::Tokens(&tokens))?,
                EvalMode::MovingAverage(gamma) => {
                    let trace = context_trace(model, Input::Tokens(&tokens))?;
                    let (n, dy) = (trace.shape()[1], trace.shape()[2]);
                    let init: Vec<f64> = (0..tokens.len()).flat_map(|b| trace.data()[b * n * dy..b * n * dy + dy].iter().map(|x| x.to_f64_lossy())).collect();
                    moving_average_run(model, &init, gamma, Input::Tokens(&tokens))?
                }
                _ => unreachable!("specialized modes handled above"),
            };
            let n = tokens[0].len();
            for (bi, seq) in chunk.iter().enumerate() {
                let l = &logits.data()[bi * n * v..(bi + 1) * n * v];
                for task in &seq.tasks {
                    for ex in &task.examples {
                        let t = score_answer(l, v, &seq.tokens, ex.answer.clone());
                        if ex.span.start >= task.e2.start {
                            e2.merge(t);
                        } else if ex.span.end <= task.e1.end {
                            e1.merge(t);
                        }
                        all.merge(t);
                    }
                }
            }
        }
    }
    let segments = if mode.is_specialized() { vec![(Segment::E2, e2)] } else { vec![(Segment::E1, e1), (Segment::E2, e2), (Segment::All, all)] };
    Ok(AccuracyReport { mode, segments })
}

/// Variation of a trace `rows[s]` over `E₁ ∪ E₂`: centre and scale the trace
/// by its mean and RMS norm there, then average `‖ȳ_s − ȳ_{s−1}‖` over `s ∈ E₂`.
pub fn representation_variation(rows: &[Vec<f64>], e1: Range<usize>, e2: Range<usize>) -> f64 {
    let support: Vec<usize> = e1.clone().chain(e2.clone().filter(|s| !e1.contains(s))).collect();
    let d = rows[0].len();
    let k = support.len() as f64;
    let mean: Vec<f64> = (0..d).map(|i| support.iter().map(|&s| rows[s][i]).sum::<f64>() / k).collect();
    let centred = |s: usize| -> Vec<f64> { rows[s].iter().zip(&mean).map(|(a, m)| a - m).collect() };
    let ms: f64 = support.iter().map(|&s| centred(s).iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / k;
    if ms <= 0.0 {
        return 0.0;
    }
    let scale = ms.sqrt();
    let total: f64 = e2
        .clone()
        .filter(|&s| s > 0)
        .map(|s| {
            let (a, b) = (centred(s), centred(s - 1));
            a.iter().zip(&b).map(|(x, y)| ((x - y) / scale).powi(2)).sum::<f64>().sqrt()
        })
        .sum();
    total / e2.len() as f64
}

/// Per-sequence variations (averaged over tasks) with their mean and three
/// standard errors.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationReport {
    pub per_sequence: Vec<f64>,
    pub mean: f64,
    pub err3: f64,
}

pub fn variation_report<T: Float>(model: &Cgt<T>, seqs: &[IclSequence]) -> Result<VariationReport> {
    let mut per_sequence = Vec::with_capacity(seqs.len());
    for chunk in seqs.chunks(EVAL_CHUNK) {
        let tokens: Vec<Vec<usize>> = chunk.iter().map(|s| s.tokens.clone()).collect();
        let trace = context_trace(model, Input::Tokens(&tokens))?;
        for (bi, seq) in chunk.iter().enumerate() {
            let rows = trace_rows(&trace, bi);
            let v: f64 = seq.tasks.iter().map(|t| representation_variation(&rows, t.e1.clone(), t.e2.clone())).sum::<f64>() / seq.tasks.len() as f64;
            per_sequence.push(v);
        }
    }
    let (mean, err3) = mean_err3(&per_sequence);
    Ok(VariationReport { per_sequence, mean, err3 })
}

fn mean_err3(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 3.0 * (var / n).sqrt())
}

/// Rows of sequence `b` of a `[B, n, d]` trace.
pub fn trace_rows<T: Float>(trace: &Tensor<T>, b: usize) -> Vec<Vec<f64>> {
    let (n, d) = (trace.shape()[1], trace.shape()[2]);
    (0..n).map(|s| trace.data()[(b * n + s) * d..(b * n + s + 1) * d].iter().map(|x| x.to_f64_lossy()).collect()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    /// `[2, d_y + 1]`, bias last.
    pub weights: Vec<Vec<f64>>,
    /// Held-out mean absolute error per target, standardized units.
    pub mae: [f64; 2],
    pub underdetermined: bool,
}

impl ProbeResult {
    pub fn mean_mae(&self) -> f64 {
        (self.mae[0] + self.mae[1]) / 2.0
    }
}

/// Ridge least squares from `train` samples, scored on `test`. Targets are
/// expected standardized.
pub fn linear_probe(train: &[(Vec<f64>, [f64; 2])], test: &[(Vec<f64>, [f64; 2])]) -> Result<ProbeResult> {
    let d = train.first().map(|s| s.0.len()).ok_or_else(|| CgtError::Data("empty probe set".into()))?;
    let k = train.len();
    let x = DMatrix::from_fn(k, d + 1, |i, j| if j < d { train[i].0[j] } else { 1.0 });
    let y = DMatrix::from_fn(k, 2, |i, j| train[i].1[j]);
    // the bias column is not penalized
    let mut gram = x.transpose() * &x;
    for j in 0..d {
        gram[(j, j)] += PROBE_RIDGE;
    }
    let coef = gram
        .cholesky()
        .ok_or_else(|| CgtError::Data("probe normal equations are singular".into()))?
        .solve(&(x.transpose() * y));
    let weights: Vec<Vec<f64>> = (0..2).map(|t| (0..=d).map(|j| coef[(j, t)]).collect()).collect();
    let mut mae = [0.0; 2];
    for (feat, target) in test {
        for t in 0..2 {
            let pred: f64 = feat.iter().zip(&weights[t]).map(|(a, w)| a * w).sum::<f64>() + weights[t][d];
            mae[t] += (pred - target[t]).abs();
        }
    }
    mae.iter_mut().for_each(|m| *m /= test.len() as f64);
    Ok(ProbeResult { weights, mae, underdetermined: k < d + 1 })
}

/// `(y_s, (a, b))` for every position `s` in E₂ of every task, with `(a, b)`
/// z-scored over the tasks of `seqs`.
pub fn probe_samples<T: Float>(model: &Cgt<T>, seqs: &[IclSequence]) -> Result<Vec<Vec<(Vec<f64>, [f64; 2])>>> {
    let params: Vec<[f64; 2]> = seqs.iter().flat_map(|s| s.tasks.iter().map(|t| [t.a, t.b])).collect();
    let stats: Vec<(f64, f64)> = (0..2)
        .map(|i| {
            let v: Vec<f64> = params.iter().map(|p| p[i]).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
            (m, if sd > 0.0 { sd } else { 1.0 })
        })
        .collect();
    let mut out = Vec::with_capacity(seqs.len());
    for chunk in seqs.chunks(EVAL_CHUNK) {
        let tokens: Vec<Vec<usize>> = chunk.iter().map(|s| s.tokens.clone()).collect();
        let trace = context_trace(model, Input::Tokens(&tokens))?;
        for (bi, seq) in chunk.iter().enumerate() {
            let rows = trace_rows(&trace, bi);
            let mut samples = Vec::new();
            for t in &seq.tasks {
                let target = [(t.a - stats[0].0) / stats[0].1, (t.b - stats[1].0) / stats[1].1];
                samples.extend(t.e2.clone().map(|s| (rows[s].clone(), target)));
            }
            out.push(samples);
        }
    }
    Ok(out)
}

/// Probe trained on the first `train` sequences and scored on the rest.
pub fn probe_report<T: Float>(model: &Cgt<T>, seqs: &[IclSequence], train: usize) -> Result<ProbeResult> {
    let samples = probe_samples(model, seqs)?;
    let (a, b) = samples.split_at(train.min(samples.len()));
    let tr: Vec<_> = a.iter().flatten().cloned().collect();
    let te: Vec<_> = b.iter().flatten().cloned().collect();
    linear_probe(&tr, &te)
}

/// `M[i, j] = n_i·n_j` of the unit-normalized trace, row-major.
pub fn dot_product_matrix(rows: &[Vec<f64>]) -> Vec<f64> {
    let unit: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.iter().map(|v| if norm > 0.0 { v / norm } else { 0.0 }).collect()
        })
        .collect();
    let n = rows.len();
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = if i == j && unit[i].iter().any(|x| *x != 0.0) {
                1.0
            } else {
                unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0)
            };
            m[i * n + j] = v;
            m[j * n + i] = v;
        }
    }
    m
}

/// Mean of the last `EMBED_WINDOW` context vectors; the flag marks a trace
/// shorter than the window.
pub fn document_embedding(rows: &[Vec<f64>]) -> (Vec<f64>, bool) {
    let take = rows.len().min(EMBED_WINDOW);
    let d = rows.first().map_or(0, Vec::len);
    let tail = &rows[rows.len() - take..];
    let mean = (0..d).map(|i| tail.iter().map(|r| r[i]).sum::<f64>() / take as f64).collect();
    (mean, rows.len() < EMBED_WINDOW)
}

/// Mean L2 errors over the pairs after `k`: the model with its context frozen
/// after `k` pairs, the dynamic model, and a ridge fit on the first `k` pairs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LinRegReport {
    pub specialized: f64,
    pub dynamic: f64,
    pub ridge: f64,
}

pub fn linreg_eval<T: Float>(model: &Cgt<T>, seqs: &[LinRegSequence], k: usize, ridge_lambda: f64) -> Result<LinRegReport> {
    let n_pairs = seqs[0].xs.len();
    if k == 0 || k >= n_pairs {
        return Err(CgtError::PositionOutOfRange { pos: k, len: n_pairs });
    }
    let width = seqs[0].xs[0].len().max(seqs[0].ys[0].len());
    let d_out = seqs[0].ys[0].len();
    let mut rep = LinRegReport::default();
    for chunk in seqs.chunks(EVAL_CHUNK) {
        let b = chunk.len();
        let n = 2 * n_pairs;
        let data: Vec<f64> = chunk.iter().flat_map(|s| s.inputs(width).into_iter().flatten()).collect();
        let full = Tensor::<T>::from_f64(&[b, n, width], &data)?;
        let dynamic = run_dynamic(model, Input::Vectors(&full))?;
        let trace = context_trace(model, Input::Vectors(&full))?;
        let dy = trace.shape()[2];
        let ys: Vec<f64> = (0..b).flat_map(|bi| trace_rows(&trace, bi)[2 * k - 1].clone()).collect();
        let suffix_len = n - 2 * k;
        let sdata: Vec<f64> = (0..b).flat_map(|bi| data[(bi * n + 2 * k) * width..(bi + 1) * n * width].to_vec()).collect();
        let suffix = Tensor::<T>::from_f64(&[b, suffix_len, width], &sdata)?;
        let frozen = freeze_and_run(model, &ys[..b * dy], Input::Vectors(&suffix), None)?;
        let out_w = dynamic.shape()[2];
        for (bi, seq) in chunk.iter().enumerate() {
            for i in k..n_pairs {
                let at = |t: &Tensor<T>, len: usize, pos: usize| -> Vec<f64> {
                    t.data()[(bi * len + pos) * out_w..(bi * len + pos) * out_w + d_out].iter().map(|x| x.to_f64_lossy()).collect()
                };
                rep.dynamic += l2(&at(&dynamic, n, 2 * i), &seq.clean[i]);
                rep.specialized += l2(&at(&frozen, suffix_len, 2 * (i - k)), &seq.clean[i]);
            }
            rep.ridge += ridge_error(seq, k, k..n_pairs, ridge_lambda) * (n_pairs - k) as f64;
        }
    }
    let count = (seqs.len() * (n_pairs - k)) as f64;
    rep.specialized /= count;
    rep.dynamic /= count;
    rep.ridge /= count;
    Ok(rep)
}

// ---------------------------------------------------------------- CSV output

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CgtError::io(path, e))
}

/// `accuracy.csv`: `run,segment,mode,value,stderr`.
pub fn write_accuracy_csv(path: &Path, run: &str, reports: &[AccuracyReport]) -> Result<()> {
    let mut s = String::from("run,segment,mode,value,stderr\n");
    for r in reports {
        for (seg, t) in &r.segments {
            writeln!(s, "{run},{},{},{},{}", seg.name(), r.mode.name(), t.accuracy(), t.stderr()).expect("string write");
        }
    }
    write_file(path, &s)
}

/// `variation.csv`: `run,seq,value`, closed by `mean` and `err3` rows.
pub fn write_variation_csv(path: &Path, run: &str, rep: &VariationReport) -> Result<()> {
    let mut s = String::from("run,seq,value\n");
    for (i, v) in rep.per_sequence.iter().enumerate() {
        writeln!(s, "{run},{i},{v}").expect("string write");
    }
    writeln!(s, "{run},mean,{}\n{run},err3,{}", rep.mean, rep.err3).expect("string write");
    write_file(path, &s)
}

/// `probe.csv`: `run,target,mae` for `a`, `b` and their mean.
pub fn write_probe_csv(path: &Path, run: &str, p: &ProbeResult) -> Result<()> {
    let s = format!("run,target,mae\n{run},a,{}\n{run},b,{}\n{run},mean,{}\n", p.mae[0], p.mae[1], p.mean_mae());
    write_file(path, &s)
}

/// Square matrix without header, one row per line.
pub fn write_dotmat_csv(path: &Path, m: &[f64], n: usize) -> Result<()> {
    crate::gp::write_matrix_csv(path, m, n)
}

/// `embeddings.csv`: `doc_id,label,short,v0..v{d−1}`.
pub fn write_embeddings_csv(path: &Path, rows: &[(String, String, Vec<f64>, bool)]) -> Result<()> {
    let d = rows.first().map_or(0, |r| r.2.len());
    let mut s = String::from("doc_id,label,short");
    for i in 0..d {
        write!(s, ",v{i}").expect("string write");
    }
    s.push('\n');
    for (id, label, v, short) in rows {
        write!(s, "{id},{label},{}", *short as u8).expect("string write");
        for x in v {
            write!(s, ",{x}").expect("string write");
        }
        s.push('\n');
    }
    write_file(path, &s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_answers_only() {
        // vocab 3, tokens [0, 1, 2, 1]; answer occupies positions 2..4
        let tokens = [0, 1, 2, 1];
        let mut logits = vec![0.0f64; 12];
        logits[3 + 2] = 1.0; // position 1 predicts 2
        logits[6 + 1] = 1.0; // position 2 predicts 1
        let t = score_answer(&logits, 3, &tokens, 2..4);
        assert_eq!((t.correct, t.tokens_correct), (1, 2));
        logits[6] = 2.0;
        let t = score_answer(&logits, 3, &tokens, 2..4);
        assert_eq!((t.correct, t.tokens_correct), (0, 1));
    }

    #[test]
    fn variation_by_formula() {
        let rows = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0]];
        // mean (0.5, 0.5); every centred row has norm² 0.5, so scale = √0.5;
        // steps over E₂ = {2, 3} each have length 1/√0.5
        let v = representation_variation(&rows, 0..2, 2..4);
        assert!((v - 2f64.sqrt()).abs() < 1e-12);
        let flat = vec![vec![1.0, 2.0]; 4];
        assert_eq!(representation_variation(&flat, 0..2, 2..4), 0.0);
        let tail = vec![vec![0.0, 3.0], vec![2.0, 1.0], vec![5.0, 5.0], vec![5.0, 5.0]];
        assert!(representation_variation(&tail, 0..2, 3..4) == 0.0);
    }

    #[test]
    fn probe_recovers_linear_targets() {
        let mut rng = cgt_tensor::stream_rng(0, cgt_tensor::Stream::Oracle, 0);
        let samples: Vec<(Vec<f64>, [f64; 2])> = (0..40)
            .map(|_| {
                let y = Tensor::<f64>::randn(&[3], 1.0, &mut rng).into_data();
                let t = [2.0 * y[0] - y[2] + 0.5, y[1] + 3.0 * y[2]];
                (y, t)
            })
            .collect();
        let p = linear_probe(&samples[..30], &samples[30..]).unwrap();
        assert!(p.mean_mae() < 1e-6, "{}", p.mean_mae());
    }

    #[test]
    fn dot_matrix_blocks() {
        let rows: Vec<Vec<f64>> = (0..8).map(|s| if s < 4 { vec![2.0, 0.0] } else { vec![0.0, -1.0] }).collect();
        let m = dot_product_matrix(&rows);
        for i in 0..8 {
            assert_eq!(m[i * 8 + i], 1.0);
            for j in 0..8 {
                assert_eq!(m[i * 8 + j], m[j * 8 + i]);
                assert_eq!(m[i * 8 + j], if (i < 4) == (j < 4) { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn short_documents_are_flagged() {
        let rows: Vec<Vec<f64>> = (0..20).map(|s| vec![s as f64]).collect();
        let (v, short) = document_embedding(&rows);
        assert_eq!((v[0], short), (11.5, false));
        let (v, short) = document_embedding(&rows[..3]);
        assert_eq!((v[0], short), (1.0, true));
    }
}
