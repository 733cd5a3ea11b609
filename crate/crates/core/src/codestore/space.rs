//! Byte counts for serving a re-ranker from compressed token embeddings.
//!
//! A contextual-quantization server keeps three things: the codebooks, the
//! uncompressed document-independent table, and per document the token ids
//! plus one code per token. The uncompressed baseline stores every token
//! embedding at `bytes_per_float` precision.

use crate::error::{Error, Result};
use crate::types::bits_for;

/// Bits per token in a multi-layer 256-bit LSH signature index (5 layers).
const BECR_BITS_PER_TOKEN: f64 = 5.0 * 256.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceModel {
    /// Z, the number of documents.
    pub docs: f64,
    /// n, mean tokens per document.
    pub mean_tokens: f64,
    /// V, vocabulary size.
    pub vocab: f64,
    pub dim: usize,
    pub books: usize,
    pub codewords: usize,
    /// h, codeword width (D/M for product, D for additive).
    pub sub_dim: usize,
    /// Precision of the uncompressed baseline, 2 or 4.
    pub bytes_per_float: u32,
    pub token_id_bytes: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceReport {
    pub codebook_bytes: f64,
    pub doc_indep_bytes: f64,
    pub codes_bytes: f64,
    pub colbert_baseline_bytes: f64,
    /// Uncompressed token embeddings over code + token id, per token.
    pub ratio_colbert_to_cq: f64,
}

impl SpaceModel {
    fn validate(&self) -> Result<()> {
        let reals = [("Z", self.docs), ("n", self.mean_tokens), ("V", self.vocab)];
        if let Some((name, v)) = reals.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::BadParam(format!("{name} must be positive, got {v}")));
        }
        let ints = [("D", self.dim), ("M", self.books), ("h", self.sub_dim)];
        if let Some((name, _)) = ints.iter().find(|(_, v)| *v == 0) {
            return Err(Error::BadParam(format!("{name} must be positive")));
        }
        if self.codewords < 2 {
            return Err(Error::BadParam("K must be at least 2".into()));
        }
        if !matches!(self.bytes_per_float, 2 | 4) {
            return Err(Error::BadParam(format!(
                "bytes per float must be 2 or 4, got {}",
                self.bytes_per_float
            )));
        }
        Ok(())
    }
}

/// Code bits per token: M entries of ceil(log2 K) bits.
fn code_bits(books: usize, codewords: usize) -> f64 {
    (books as f64) * f64::from(bits_for(codewords))
}

pub fn space_report(m: &SpaceModel) -> Result<SpaceReport> {
    m.validate()?;
    let (d, books, k, h) = (m.dim as f64, m.books as f64, m.codewords as f64, m.sub_dim as f64);
    let bits = code_bits(m.books, m.codewords);
    let id_bytes = f64::from(m.token_id_bytes);
    let float_bytes = f64::from(m.bytes_per_float);
    Ok(SpaceReport {
        codebook_bytes: books * k * h * 4.0,
        doc_indep_bytes: m.vocab * d * 4.0,
        codes_bytes: m.docs * m.mean_tokens * (bits / 8.0 + id_bytes),
        colbert_baseline_bytes: m.docs * d * m.mean_tokens * float_bytes,
        ratio_colbert_to_cq: (float_bytes * d * 8.0) / (bits + 8.0 * id_bytes),
    })
}

/// Space of a 5×256-bit LSH signature index over the code + token id cost.
pub fn becr_ratio(books: usize, codewords: usize, token_id_bytes: u32) -> Result<f64> {
    if books == 0 || codewords < 2 {
        return Err(Error::BadParam("need M >= 1 and K >= 2".into()));
    }
    Ok(BECR_BITS_PER_TOKEN / (code_bits(books, codewords) + 8.0 * f64::from(token_id_bytes)))
}
