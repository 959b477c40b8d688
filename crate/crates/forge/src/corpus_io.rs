//! Token files: a 16-byte header (`BNSC` magic, `u32` version, `u64` token
//! count) followed by the ids as little-endian `u32`.

use std::fs;
use std::path::Path;

use bonsai_core::eval::{Corpus, Provenance};

use crate::error::{ForgeError, Result};

pub const MAGIC: &[u8; 4] = b"BNSC";
pub const VERSION: u32 = 1;

pub fn encode_tokens(tokens: &[u32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * tokens.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tokens.len() as u64).to_le_bytes());
    for t in tokens {
        out.extend_from_slice(&t.to_le_bytes());
    }
    out
}

pub fn decode_tokens(bytes: &[u8]) -> Result<Vec<u32>> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(ForgeError::format("not a token file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(ForgeError::format(format!("unsupported token file version {version}")));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let body = &bytes[16..];
    if count.checked_mul(4) != Some(body.len() as u64) {
        return Err(ForgeError::format(format!(
            "header declares {count} tokens but {} bytes follow",
            body.len()
        )));
    }
    Ok(body.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
}

pub fn save_tokens(tokens: &[u32], path: &Path) -> Result<()> {
    fs::write(path, encode_tokens(tokens)).map_err(|e| ForgeError::io(path, e))
}

pub fn corpus_load(path: &Path, chunk_len: usize) -> Result<Corpus> {
    let bytes = fs::read(path).map_err(|e| ForgeError::io(path, e))?;
    let tokens = decode_tokens(&bytes)?;
    Ok(Corpus::new(tokens, chunk_len, Provenance::File(path.display().to_string()))?)
}
