//! Late-interaction (MaxSim) scoring and re-ranking from compressed stores.

use std::cmp::Ordering;

use log::warn;

use crate::codestore::CodeStore;
use crate::error::{Error, Result};
use crate::par;
use crate::types::{check_dim, DocumentCodes, DocumentTokens, EmbeddingMatrix, QuantizerSpec};

/// Anything that turns stored codes back into token embeddings.
pub trait DocumentDecoder: Sync {
    fn spec(&self) -> &QuantizerSpec;
    fn reconstruct(&self, codes: &DocumentCodes) -> Result<EmbeddingMatrix>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankRequest {
    pub query: EmbeddingMatrix,
    pub candidates: Vec<u64>,
    /// Number of results to keep.
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredDoc {
    pub doc_id: u64,
    pub score: f64,
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

/// Index of the best-matching document row for every query row.
pub(crate) fn maxsim_argmax(query: &EmbeddingMatrix, doc: &EmbeddingMatrix) -> Vec<(usize, f64)> {
    query
        .iter_rows()
        .map(|q| {
            doc.iter_rows()
                .enumerate()
                .map(|(j, d)| (j, dot(q, d)))
                .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
        })
        .collect()
}

/// Sum over query tokens of the best dot product against any document token.
pub fn maxsim_score(query: &EmbeddingMatrix, doc: &EmbeddingMatrix) -> Result<f64> {
    check_dim(query.dim(), doc.dim())?;
    if doc.is_empty() {
        return Err(Error::EmptyDoc);
    }
    if query.is_empty() {
        warn!("scoring an empty query; returning 0");
        return Ok(0.0);
    }
    Ok(maxsim_argmax(query, doc).iter().map(|m| m.1).sum())
}

/// Scores on uncompressed embeddings, in input order.
pub fn teacher_scores(query: &EmbeddingMatrix, docs: &[DocumentTokens]) -> Result<Vec<f64>> {
    par::try_map_slice(docs, |d| maxsim_score(query, &d.embeddings))
}

/// Descending by score, ties by ascending doc id.
pub fn sort_scored(docs: &mut [ScoredDoc]) {
    docs.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then(a.doc_id.cmp(&b.doc_id))
    });
}

/// Decompress each candidate, score it against the query and keep the top k.
pub fn rerank<D: DocumentDecoder + ?Sized>(
    req: &RerankRequest,
    store: &CodeStore,
    decoder: &D,
) -> Result<Vec<ScoredDoc>> {
    if req.k == 0 {
        return Err(Error::BadParam("rerank depth k must be at least 1".into()));
    }
    if req.candidates.is_empty() {
        return Err(Error::BadParam("no candidates to rerank".into()));
    }
    let mut scored = par::try_map_slice(&req.candidates, |&id| {
        let codes = store.get(id).ok_or(Error::MissingDoc(id))?;
        let emb = decoder.reconstruct(codes)?;
        let score = maxsim_score(&req.query, &emb)?;
        Ok::<_, Error>(ScoredDoc { doc_id: id, score })
    })?;
    sort_scored(&mut scored);
    scored.truncate(req.k);
    Ok(scored)
}
