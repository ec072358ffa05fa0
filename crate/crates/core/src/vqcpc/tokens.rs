//! Token sequences, their file format and codebook-usage diagnostics.
//!
//! File layout: `b"VQGTOKN\0"`, u32 version, u32 record count, then per record
//! a u16-prefixed UTF-8 source id, u8 pitch, u32 token count and one byte per
//! token.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil;

const MAGIC: &[u8; 8] = b"VQGTOKN\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub source_id: String,
    pub pitch: u8,
    pub tokens: Vec<u8>,
}

pub fn encode_token_file(seqs: &[TokenSequence]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(seqs.len() as u32).to_le_bytes());
    for s in seqs {
        out.extend_from_slice(&(s.source_id.len() as u16).to_le_bytes());
        out.extend_from_slice(s.source_id.as_bytes());
        out.push(s.pitch);
        out.extend_from_slice(&(s.tokens.len() as u32).to_le_bytes());
        out.extend_from_slice(&s.tokens);
    }
    out
}

pub fn decode_token_file(path: &Path, bytes: &[u8]) -> Result<Vec<TokenSequence>> {
    let bad = |m: &str| Error::format(path, m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a token file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let count = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let mut pos = 16;
    let mut take = |n: usize| -> Result<&[u8]> {
        if pos + n > bytes.len() {
            return Err(bad("truncated token file"));
        }
        pos += n;
        Ok(&bytes[pos - n..pos])
    };
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let id_len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let source_id = String::from_utf8(take(id_len)?.to_vec()).map_err(|_| bad("source id is not UTF-8"))?;
        let pitch = take(1)?[0];
        let n = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let tokens = take(n)?.to_vec();
        out.push(TokenSequence {
            source_id,
            pitch,
            tokens,
        });
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes after last record"));
    }
    Ok(out)
}

pub fn write_token_file(path: &Path, seqs: &[TokenSequence]) -> Result<()> {
    fsutil::write_atomic(path, &encode_token_file(seqs))
}

pub fn read_token_file(path: &Path) -> Result<Vec<TokenSequence>> {
    decode_token_file(path, &fsutil::read(path)?)
}

/// `exp` of the entropy of the pooled token histogram; lies in `[1, C]`.
pub fn codebook_perplexity<'a>(seqs: impl IntoIterator<Item = &'a [u8]>) -> f64 {
    let mut counts = [0usize; 256];
    let mut total = 0usize;
    for s in seqs {
        for &t in s {
            counts[t as usize] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return 1.0;
    }
    let entropy: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum();
    entropy.exp()
}
