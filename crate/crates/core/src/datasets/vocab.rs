//! Character and byte tokenizers.

use crate::error::{CgtError, Result};

/// Symbol table of the arithmetic dataset; token id = index.
pub const ICL_VOCAB: &str = "0123456789*=+-|#";

pub const TIMES: usize = 10;
pub const EQUALS: usize = 11;
pub const PLUS: usize = 12;
pub const MINUS: usize = 13;
pub const SEP: usize = 14;
pub const END: usize = 15;

pub fn icl_encode(text: &str) -> Result<Vec<usize>> {
    text.chars()
        .map(|c| ICL_VOCAB.find(c).ok_or_else(|| CgtError::Data(format!("character {c:?} not in vocabulary"))))
        .collect()
}

pub fn icl_decode(tokens: &[usize]) -> Result<String> {
    tokens
        .iter()
        .map(|&t| {
            ICL_VOCAB.as_bytes().get(t).map(|&b| b as char).ok_or(CgtError::TokenOutOfRange { id: t, vocab: ICL_VOCAB.len() })
        })
        .collect()
}

pub const BYTE_VOCAB: usize = 256;

pub fn byte_encode(text: &[u8]) -> Vec<usize> {
    text.iter().map(|&b| b as usize).collect()
}

pub fn byte_decode(tokens: &[usize]) -> Result<Vec<u8>> {
    tokens
        .iter()
        .map(|&t| u8::try_from(t).map_err(|_| CgtError::TokenOutOfRange { id: t, vocab: BYTE_VOCAB }))
        .collect()
}
