//! Byte-level text mixtures built from user-supplied documents.

use std::path::PathBuf;

use rand::seq::index;
use rand::Rng;
use serde::Serialize;

use super::vocab;
use crate::error::{CgtError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TextSpec {
    pub corpus: Vec<PathBuf>,
    pub l_max: usize,
    pub l_start: usize,
    pub l_finish: usize,
    pub n_excerpts: usize,
    /// Treat each non-empty line as a separate document.
    pub split_lines: bool,
}

impl Default for TextSpec {
    fn default() -> Self {
        TextSpec { corpus: Vec::new(), l_max: 512, l_start: 256, l_finish: 384, n_excerpts: 2, split_lines: false }
    }
}

impl TextSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.n_excerpts) {
            return Err(CgtError::Data(format!("n_excerpts must be 1, 2 or 3 (got {})", self.n_excerpts)));
        }
        if !(self.l_start >= 1 && self.l_start <= self.l_finish && self.l_finish < self.l_max) {
            return Err(CgtError::Data(format!(
                "need 1 <= l_start <= l_finish < l_max (got {}, {}, {})",
                self.l_start, self.l_finish, self.l_max
            )));
        }
        Ok(())
    }

    /// Bounds of each excerpt's length before the final one: `[l_start, l_finish]`
    /// split evenly across the joins.
    fn segment_bounds(&self) -> (usize, usize) {
        let joins = self.n_excerpts - 1;
        ((self.l_start / joins).max(1), (self.l_finish / joins).max(1))
    }
}

#[derive(Debug)]
pub struct Corpus {
    pub docs: Vec<Vec<u8>>,
    /// Source file of each document.
    pub origin: Vec<usize>,
    pub files: Vec<PathBuf>,
}

impl Corpus {
    /// Load documents of at least `l_max` bytes.
    pub fn load(spec: &TextSpec) -> Result<Corpus> {
        spec.validate()?;
        if spec.corpus.is_empty() {
            return Err(CgtError::config("data.corpus", "no corpus files given"));
        }
        let mut docs = Vec::new();
        let mut origin = Vec::new();
        let mut short = Vec::new();
        for (fi, path) in spec.corpus.iter().enumerate() {
            let bytes = std::fs::read(path).map_err(|e| CgtError::io(path, e))?;
            let before = docs.len();
            let parts: Vec<&[u8]> = if spec.split_lines { bytes.split(|&b| b == b'\n').collect() } else { vec![&bytes[..]] };
            for p in parts.into_iter().filter(|p| p.len() >= spec.l_max) {
                docs.push(p.to_vec());
                origin.push(fi);
            }
            if docs.len() == before {
                short.push(path.clone());
            }
        }
        if docs.len() < spec.n_excerpts {
            return Err(CgtError::CorpusTooShort { need: spec.l_max, files: short });
        }
        Ok(Corpus { docs, origin, files: spec.corpus.clone() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TextSample {
    pub tokens: Vec<usize>,
    /// Token index where each later excerpt begins.
    pub joins: Vec<usize>,
    pub docs: Vec<usize>,
}

/// Excerpts start at the beginning of distinct documents.
pub fn generate<R: Rng + ?Sized>(spec: &TextSpec, corpus: &Corpus, rng: &mut R) -> TextSample {
    let docs: Vec<usize> = index::sample(rng, corpus.docs.len(), spec.n_excerpts).into_vec();
    let mut tokens = Vec::with_capacity(spec.l_max);
    let mut joins = Vec::new();
    let (lo, hi) = if spec.n_excerpts > 1 { spec.segment_bounds() } else { (0, 0) };
    for (k, &d) in docs.iter().enumerate() {
        let doc = &corpus.docs[d];
        if k > 0 {
            joins.push(tokens.len());
        }
        let take = if k + 1 == docs.len() { spec.l_max - tokens.len() } else { rng.random_range(lo..=hi) };
        tokens.extend(vocab::byte_encode(&doc[..take]));
    }
    TextSample { tokens, joins, docs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cgt_tensor::{stream_rng, Stream};

    fn corpus(n: usize, len: usize) -> Corpus {
        Corpus { docs: (0..n).map(|i| vec![b'a' + i as u8; len]).collect(), origin: (0..n).collect(), files: vec![] }
    }

    #[test]
    fn single_excerpt_has_no_join() {
        let spec = TextSpec { n_excerpts: 1, l_max: 64, l_start: 10, l_finish: 20, ..TextSpec::default() };
        let s = generate(&spec, &corpus(3, 100), &mut stream_rng(0, Stream::Data, 0));
        assert_eq!(s.tokens.len(), 64);
        assert!(s.joins.is_empty());
    }

    #[test]
    fn joins_fall_in_range() {
        let spec = TextSpec { n_excerpts: 2, l_max: 64, l_start: 10, l_finish: 20, ..TextSpec::default() };
        let c = corpus(4, 64);
        for i in 0..200 {
            let s = generate(&spec, &c, &mut stream_rng(1, Stream::Data, i));
            assert_eq!(s.tokens.len(), 64);
            assert!((10..=20).contains(&s.joins[0]));
            assert_ne!(s.docs[0], s.docs[1]);
            let j = s.joins[0];
            assert_ne!(s.tokens[j - 1], s.tokens[j]);
        }
    }

    #[test]
    fn three_excerpts_have_ordered_joins() {
        let spec = TextSpec { n_excerpts: 3, l_max: 64, l_start: 20, l_finish: 40, ..TextSpec::default() };
        let s = generate(&spec, &corpus(5, 64), &mut stream_rng(2, Stream::Data, 0));
        assert_eq!(s.joins.len(), 2);
        assert!(s.joins[0] < s.joins[1] && s.joins[1] <= 40);
    }
}
