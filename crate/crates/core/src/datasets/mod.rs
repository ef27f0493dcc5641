//! Dataset families and their JSONL dump format.

pub mod icl;
pub mod linreg;
pub mod text;
pub mod vocab;

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use cgt_tensor::{stream_rng, Stream};
use serde_json::{json, Value};

pub use icl::{IclSequence, IclSpec};
pub use linreg::{LinRegSequence, LinRegSpec};
pub use text::{Corpus, TextSample, TextSpec};

use crate::error::{CgtError, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum DataSpec {
    Icl(IclSpec),
    LinReg(LinRegSpec),
    Text(TextSpec),
}

impl DataSpec {
    pub fn seq_len(&self) -> usize {
        match self {
            DataSpec::Icl(s) => s.seq_len(),
            DataSpec::LinReg(s) => s.seq_len(),
            DataSpec::Text(s) => s.l_max,
        }
    }

    /// Token vocabulary the data needs; 0 for continuous data.
    pub fn vocab_size(&self) -> usize {
        match self {
            DataSpec::Icl(_) => vocab::ICL_VOCAB.len(),
            DataSpec::LinReg(_) => 0,
            DataSpec::Text(_) => vocab::BYTE_VOCAB,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DataSpec::Icl(s) => s.validate(),
            DataSpec::LinReg(s) => s.validate(),
            DataSpec::Text(s) => s.validate(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Sample {
    Icl(IclSequence),
    LinReg(LinRegSequence),
    Text(TextSample),
}

impl Sample {
    /// Token ids, `None` for continuous samples.
    pub fn tokens(&self) -> Option<&[usize]> {
        match self {
            Sample::Icl(s) => Some(&s.tokens),
            Sample::Text(s) => Some(&s.tokens),
            Sample::LinReg(_) => None,
        }
    }

    pub fn as_icl(&self) -> Option<&IclSequence> {
        match self {
            Sample::Icl(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_linreg(&self) -> Option<&LinRegSequence> {
        match self {
            Sample::LinReg(s) => Some(s),
            _ => None,
        }
    }

    /// One dump record. Continuous samples store the interleaved input
    /// vectors under `tokens`.
    pub fn to_json(&self) -> Value {
        match self {
            Sample::Icl(s) => json!({ "tokens": s.tokens, "meta": { "tasks": s.tasks } }),
            Sample::Text(s) => json!({ "tokens": s.tokens, "meta": { "joins": s.joins, "docs": s.docs } }),
            Sample::LinReg(s) => {
                let width = s.xs[0].len().max(s.ys[0].len());
                json!({
                    "tokens": s.inputs(width),
                    "meta": { "u": s.u, "b": s.b, "targets": s.ys, "clean": s.clean },
                })
            }
        }
    }
}

/// Number of worker threads from `CGT_THREADS` (default 1).
pub fn threads() -> usize {
    std::env::var("CGT_THREADS").ok().and_then(|v| v.parse().ok()).filter(|&n| n > 0).unwrap_or(1)
}

/// A dataset spec plus any loaded corpus. Sample `i` under `seed` depends only
/// on `(seed, i)`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub spec: DataSpec,
    corpus: Option<Arc<Corpus>>,
}

impl Dataset {
    pub fn open(spec: &DataSpec) -> Result<Dataset> {
        spec.validate()?;
        let corpus = match spec {
            DataSpec::Text(t) => Some(Arc::new(Corpus::load(t)?)),
            _ => None,
        };
        Ok(Dataset { spec: spec.clone(), corpus })
    }

    pub fn corpus(&self) -> Option<&Corpus> {
        self.corpus.as_deref()
    }

    pub fn sample(&self, seed: u64, index: u64) -> Sample {
        let mut rng = stream_rng(seed, Stream::Data, index);
        match &self.spec {
            DataSpec::Icl(s) => Sample::Icl(icl::generate(s, &mut rng)),
            DataSpec::LinReg(s) => Sample::LinReg(linreg::generate(s, &mut rng)),
            DataSpec::Text(s) => {
                Sample::Text(text::generate(s, self.corpus.as_ref().expect("text dataset has a corpus"), &mut rng))
            }
        }
    }

    /// Samples `start..start + count`, generated on `threads()` workers.
    pub fn batch(&self, seed: u64, start: u64, count: usize) -> Vec<Sample> {
        let workers = threads().min(count.max(1));
        if workers <= 1 {
            return (0..count as u64).map(|i| self.sample(seed, start + i)).collect();
        }
        let chunk = count.div_ceil(workers);
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let lo = (w * chunk).min(count) as u64;
                    let hi = ((w + 1) * chunk).min(count) as u64;
                    scope.spawn(move || (lo..hi).map(|i| self.sample(seed, start + i)).collect::<Vec<_>>())
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("data worker panicked")).collect()
        })
    }

    /// Write `count` samples as JSON lines.
    pub fn dump(&self, seed: u64, count: usize, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| CgtError::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        for s in self.batch(seed, 0, count) {
            serde_json::to_writer(&mut w, &s.to_json()).map_err(|e| CgtError::Data(e.to_string()))?;
            w.write_all(b"\n").map_err(|e| CgtError::io(path, e))?;
        }
        w.flush().map_err(|e| CgtError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_matches_serial_generation() {
        let ds = Dataset::open(&DataSpec::Icl(IclSpec::default())).unwrap();
        let serial: Vec<_> = (0..7).map(|i| ds.sample(9, 3 + i)).collect();
        assert_eq!(ds.batch(9, 3, 7), serial);
    }

    #[test]
    fn dump_record_has_tokens_and_meta() {
        let ds = Dataset::open(&DataSpec::LinReg(LinRegSpec { n_pairs: 3, ..Default::default() })).unwrap();
        let v = ds.sample(0, 0).to_json();
        assert_eq!(v["tokens"].as_array().unwrap().len(), 6);
        assert_eq!(v["meta"]["u"].as_array().unwrap().len(), 16);
    }
}
