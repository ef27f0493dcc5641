//! Arithmetic in-context learning sequences: each task hides `(a, b)` and
//! shows examples `AAA*BBB=±CCCCC`.

use std::ops::Range;

use rand::Rng;
use serde::Serialize;

use super::vocab::{self, END, EQUALS, MINUS, PLUS, SEP, TIMES};
use crate::error::{CgtError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct IclSpec {
    pub n_tasks: usize,
    pub n_ex: usize,
    pub digits: usize,
}

impl Default for IclSpec {
    fn default() -> Self {
        IclSpec { n_tasks: 4, n_ex: 4, digits: 3 }
    }
}

impl IclSpec {
    /// Tokens per example including the trailing separator.
    pub fn example_len(&self) -> usize {
        3 * self.digits + 6
    }

    pub fn task_len(&self) -> usize {
        self.n_ex * self.example_len() + 1
    }

    pub fn seq_len(&self) -> usize {
        self.n_tasks * self.task_len()
    }

    /// Answer tokens: sign plus `d + 2` digits.
    pub fn answer_len(&self) -> usize {
        self.digits + 3
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tasks == 0 || self.n_ex < 2 || self.digits == 0 || self.digits > 6 {
            return Err(CgtError::Data(format!(
                "icl spec needs n_tasks >= 1, n_ex >= 2, 1 <= digits <= 6 (got {self:?})"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IclExample {
    pub a_num: u64,
    pub b_num: u64,
    pub c: i64,
    /// Token range of the whole example, separator included.
    pub span: Range<usize>,
    /// Token range of the answer (sign and digits).
    pub answer: Range<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IclTask {
    pub a: f64,
    pub b: f64,
    pub examples: Vec<IclExample>,
    /// Tokens of the first two examples.
    pub e1: Range<usize>,
    /// Tokens of the last two examples.
    pub e2: Range<usize>,
    /// Whole task including the terminator.
    pub span: Range<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IclSequence {
    pub tokens: Vec<usize>,
    pub tasks: Vec<IclTask>,
}

/// `a·A + b·B` truncated toward zero.
pub fn truncated_combination(a: f64, b: f64, a_num: u64, b_num: u64) -> i64 {
    (a * a_num as f64 + b * b_num as f64).trunc() as i64
}

fn push_digits(out: &mut Vec<usize>, mut v: u64, width: usize) {
    let start = out.len();
    out.resize(start + width, 0);
    for i in (0..width).rev() {
        out[start + i] = (v % 10) as usize;
        v /= 10;
    }
    debug_assert_eq!(v, 0, "value wider than {width} digits");
}

/// Render one example `AAA*BBB=±CCCCC` (no separator).
pub fn render_example(digits: usize, a_num: u64, b_num: u64, c: i64) -> Vec<usize> {
    let mut out = Vec::with_capacity(3 * digits + 5);
    push_digits(&mut out, a_num, digits);
    out.push(TIMES);
    push_digits(&mut out, b_num, digits);
    out.push(EQUALS);
    out.push(if c < 0 { MINUS } else { PLUS });
    push_digits(&mut out, c.unsigned_abs(), digits + 2);
    out
}

pub fn generate<R: Rng + ?Sized>(spec: &IclSpec, rng: &mut R) -> IclSequence {
    let d = spec.digits;
    let limit = 10u64.pow(d as u32);
    let mut tokens = Vec::with_capacity(spec.seq_len());
    let mut tasks = Vec::with_capacity(spec.n_tasks);
    for _ in 0..spec.n_tasks {
        let a: f64 = rng.random_range(0.0..10.0);
        // open interval (-10, 10)
        let b: f64 = loop {
            let b: f64 = rng.random_range(-10.0..10.0);
            if b > -10.0 {
                break b;
            }
        };
        let task_start = tokens.len();
        let mut examples = Vec::with_capacity(spec.n_ex);
        for _ in 0..spec.n_ex {
            let a_num = rng.random_range(0..limit);
            let b_num = rng.random_range(0..limit);
            let c = truncated_combination(a, b, a_num, b_num);
            assert!(c.unsigned_abs() < 10u64.pow(d as u32 + 2), "answer exceeds {} digits", d + 2);
            let start = tokens.len();
            tokens.extend(render_example(d, a_num, b_num, c));
            let answer = tokens.len() - (d + 3)..tokens.len();
            tokens.push(SEP);
            examples.push(IclExample { a_num, b_num, c, span: start..tokens.len(), answer });
        }
        tokens.push(END);
        let e1 = examples[0].span.start..examples[1].span.end;
        let e2 = examples[spec.n_ex - 2].span.start..examples[spec.n_ex - 1].span.end;
        tasks.push(IclTask { a, b, examples, e1, e2, span: task_start..tokens.len() });
    }
    IclSequence { tokens, tasks }
}

/// Parsed example: `(A, B, C)`.
pub type ParsedExample = (u64, u64, i64);

fn read_number(tokens: &[usize], pos: &mut usize, width: usize) -> Result<u64> {
    let mut v = 0u64;
    for _ in 0..width {
        let t = *tokens.get(*pos).ok_or_else(|| CgtError::Data("truncated number".into()))?;
        if t > 9 {
            return Err(CgtError::Data(format!("expected digit at {}, got token {t}", *pos)));
        }
        v = v * 10 + t as u64;
        *pos += 1;
    }
    Ok(v)
}

fn expect(tokens: &[usize], pos: &mut usize, want: usize) -> Result<()> {
    match tokens.get(*pos) {
        Some(&t) if t == want => {
            *pos += 1;
            Ok(())
        }
        other => Err(CgtError::Data(format!("expected token {want} at {}, got {other:?}", *pos))),
    }
}

/// Parse a token stream back into tasks of `(A, B, C)` examples.
pub fn parse(tokens: &[usize], digits: usize) -> Result<Vec<Vec<ParsedExample>>> {
    let mut pos = 0;
    let mut tasks = Vec::new();
    let mut cur = Vec::new();
    while pos < tokens.len() {
        if tokens[pos] == END {
            pos += 1;
            tasks.push(std::mem::take(&mut cur));
            continue;
        }
        let a = read_number(tokens, &mut pos, digits)?;
        expect(tokens, &mut pos, TIMES)?;
        let b = read_number(tokens, &mut pos, digits)?;
        expect(tokens, &mut pos, EQUALS)?;
        let sign = match tokens.get(pos) {
            Some(&PLUS) => 1,
            Some(&MINUS) => -1,
            other => return Err(CgtError::Data(format!("expected sign at {pos}, got {other:?}"))),
        };
        pos += 1;
        let c = sign * read_number(tokens, &mut pos, digits + 2)? as i64;
        expect(tokens, &mut pos, SEP)?;
        cur.push((a, b, c));
    }
    if !cur.is_empty() {
        return Err(CgtError::Data("sequence ends without task terminator".into()));
    }
    Ok(tasks)
}

impl IclSequence {
    pub fn text(&self) -> String {
        vocab::icl_decode(&self.tokens).expect("generated tokens are in vocabulary")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cgt_tensor::{stream_rng, Stream};

    #[test]
    fn worked_examples() {
        let c = truncated_combination(1.0, 1.0, 12, 23);
        assert_eq!(vocab::icl_decode(&render_example(3, 12, 23, c)).unwrap(), "012*023=+00035");
        let c = truncated_combination(0.5, -1.5, 12, 23);
        assert_eq!(c, -28);
        assert_eq!(vocab::icl_decode(&render_example(3, 12, 23, c)).unwrap(), "012*023=-00028");
        assert_eq!(vocab::icl_decode(&render_example(3, 5, 7, 0)).unwrap(), "005*007=+00000");
    }

    #[test]
    fn layout_matches_listing() {
        let spec = IclSpec { n_tasks: 3, n_ex: 4, digits: 3 };
        let seq = generate(&spec, &mut stream_rng(1, Stream::Data, 0));
        assert_eq!(seq.tokens.len(), spec.seq_len());
        assert_eq!(spec.example_len(), 15);
        let text = seq.text();
        let tasks: Vec<&str> = text.split_terminator('#').collect();
        assert_eq!(tasks.len(), 3);
        for t in tasks {
            let ex: Vec<&str> = t.split_terminator('|').collect();
            assert_eq!(ex.len(), 4);
            for e in ex {
                assert_eq!(e.len(), 14);
                assert_eq!(&e[3..4], "*");
                assert_eq!(&e[7..8], "=");
                assert!(matches!(&e[8..9], "+" | "-"));
            }
        }
        assert!(text.ends_with("|#"));
    }

    #[test]
    fn segments_and_answers() {
        let spec = IclSpec { n_tasks: 2, n_ex: 4, digits: 2 };
        let seq = generate(&spec, &mut stream_rng(3, Stream::Data, 0));
        for task in &seq.tasks {
            assert_eq!(task.e1.len(), 2 * spec.example_len());
            assert_eq!(task.e2.end + 1, task.span.end);
            for ex in &task.examples {
                assert_eq!(ex.answer.len(), spec.answer_len());
                assert_eq!(seq.tokens[ex.answer.start - 1], EQUALS);
                assert_eq!(seq.tokens[ex.answer.end], SEP);
            }
        }
    }
}
