//! Seeded synthetic corpora where every token embedding is literally a
//! document-independent base row plus a document-specific offset.
//!
//! Base rows come from `cluster_count` Gaussian clusters and are scaled to
//! unit norm; token id `v` belongs to cluster `v % cluster_count`. Document
//! `z` is about topic `z % cluster_count` and draws its tokens from that
//! cluster. Each token gets
//!
//! ```text
//! delta = delta_scale * |base| / sqrt(D) * (0.7 * ctx_doc + 0.7 * g_token)
//! ```
//!
//! with `ctx_doc` shared by the whole document and `g_token` fresh per
//! token, so `|delta| ≈ delta_scale * |base|`.

use std::collections::HashMap;

use crate::cq::DocIndepTable;
use crate::error::{Error, Result};
use crate::rerank::{maxsim_score, sort_scored, ScoredDoc};
use crate::rng::SplitMix64;
use crate::train::RankTriple;
use crate::types::{DocumentTokens, EmbeddingMatrix, TokenId};

const BASE_STREAM: u64 = 0;
const DOC_STREAM: u64 = 1 << 32;
const QUERY_STREAM: u64 = 2 << 32;
const TRAIN_QUERY_STREAM: u64 = 3 << 32;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    /// V, vocabulary size.
    pub vocab: usize,
    /// Z, number of documents.
    pub docs: usize,
    /// n, tokens per document.
    pub tokens_per_doc: usize,
    /// D, embedding dimension.
    pub dim: usize,
    /// Ratio of offset norm to base norm. Zero gives offset-free tokens.
    pub delta_scale: f64,
    pub cluster_count: usize,
    pub query_count: usize,
    /// l, tokens per query.
    pub query_len: usize,
    /// Relative Gaussian perturbation applied to query tokens.
    pub query_noise: f64,
    /// Candidates per query, the target included.
    pub candidates: usize,
    /// Distractors drawn from the target's own topic.
    pub hard_negatives: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            vocab: 512,
            docs: 200,
            tokens_per_doc: 24,
            dim: 16,
            delta_scale: 0.2,
            cluster_count: 8,
            query_count: 20,
            query_len: 6,
            query_noise: 0.3,
            candidates: 20,
            hard_negatives: 10,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab", self.vocab),
            ("docs", self.docs),
            ("tokens_per_doc", self.tokens_per_doc),
            ("dim", self.dim),
            ("cluster_count", self.cluster_count),
            ("query_len", self.query_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::BadParam(format!("{name} must be positive")));
            }
        }
        if self.vocab > usize::from(TokenId::MAX) + 1 {
            return Err(Error::BadParam("vocab exceeds 16-bit token ids".into()));
        }
        if self.cluster_count > self.vocab {
            return Err(Error::BadParam("cluster_count exceeds vocab".into()));
        }
        if !(0.0..=1.0).contains(&self.delta_scale) {
            return Err(Error::BadParam(format!("delta_scale {} outside [0, 1]", self.delta_scale)));
        }
        if !(self.query_noise >= 0.0 && self.query_noise.is_finite()) {
            return Err(Error::BadParam("query_noise must be non-negative".into()));
        }
        if self.query_count > 0 {
            if self.candidates == 0 || self.candidates > self.docs {
                return Err(Error::BadParam(format!(
                    "candidates must be in 1..={} (docs)",
                    self.docs
                )));
            }
            if self.hard_negatives >= self.candidates {
                return Err(Error::BadParam("hard_negatives must be below candidates".into()));
            }
        }
        Ok(())
    }

    fn topic_of_doc(&self, z: usize) -> usize {
        z % self.cluster_count
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Generate the base table and documents. Document ids are `0..docs`.
pub fn gen_corpus(cfg: &SynthConfig) -> Result<(DocIndepTable, Vec<DocumentTokens>)> {
    cfg.validate()?;
    let d = cfg.dim;
    let c = cfg.cluster_count;

    let mut rng = SplitMix64::substream(cfg.seed, BASE_STREAM);
    let centers: Vec<Vec<f64>> = (0..c)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.gaussian()).collect();
            let n = norm(&v).max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    let noise_sd = 0.5 / (d as f64).sqrt();
    let mut base = EmbeddingMatrix::zeros(cfg.vocab, d);
    for v in 0..cfg.vocab {
        let row: Vec<f64> = centers[v % c].iter().map(|&x| x + noise_sd * rng.gaussian()).collect();
        let n = norm(&row).max(f64::MIN_POSITIVE);
        for (dst, x) in base.row_mut(v).iter_mut().zip(&row) {
            *dst = (x / n) as f32;
        }
    }

    let delta_sd = cfg.delta_scale / (d as f64).sqrt();
    let mut docs = Vec::with_capacity(cfg.docs);
    for z in 0..cfg.docs {
        let mut rng = SplitMix64::substream(cfg.seed, DOC_STREAM + z as u64);
        let topic = cfg.topic_of_doc(z);
        let topic_size = (cfg.vocab - topic).div_ceil(c);
        let ctx: Vec<f64> = (0..d).map(|_| rng.gaussian()).collect();
        let mut ids = Vec::with_capacity(cfg.tokens_per_doc);
        let mut emb = EmbeddingMatrix::zeros(cfg.tokens_per_doc, d);
        for t in 0..cfg.tokens_per_doc {
            let id = topic + c * rng.index(topic_size);
            let b = base.row(id);
            let bnorm = b.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
            let row = emb.row_mut(t);
            for j in 0..d {
                let delta = delta_sd * bnorm * (0.7 * ctx[j] + 0.7 * rng.gaussian());
                row[j] = (f64::from(b[j]) + delta) as f32;
                debug_assert!((f64::from(row[j]) - f64::from(b[j]) - delta).abs() <= 1e-6 * (1.0 + delta.abs()));
            }
            ids.push(id as TokenId);
        }
        docs.push(DocumentTokens::new(z as u64, ids, emb)?);
    }
    Ok((DocIndepTable::new(base)?, docs))
}

/// A query with its candidate list and the teacher's preferred order.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthQuery {
    pub qid: u64,
    pub query: EmbeddingMatrix,
    /// The document the query tokens were copied from.
    pub target: u64,
    pub candidates: Vec<u64>,
    /// Candidates scored by MaxSim on the uncompressed embeddings, best first.
    pub teacher: Vec<ScoredDoc>,
}

/// Queries built from perturbed tokens of a target document.
///
/// Candidates are the target, `hard_negatives` documents of the same topic
/// and distractors from other topics, in shuffled order.
pub fn gen_queries(cfg: &SynthConfig, corpus: &[DocumentTokens]) -> Result<Vec<SynthQuery>> {
    queries_from(cfg, corpus, cfg.query_count, QUERY_STREAM)
}

/// A second, independent query set of `count` queries for fine-tuning.
pub fn gen_training_queries(cfg: &SynthConfig, corpus: &[DocumentTokens], count: usize) -> Result<Vec<SynthQuery>> {
    queries_from(cfg, corpus, count, TRAIN_QUERY_STREAM)
}

fn queries_from(cfg: &SynthConfig, corpus: &[DocumentTokens], count: usize, stream: u64) -> Result<Vec<SynthQuery>> {
    cfg.validate()?;
    if count > 0 && cfg.query_count == 0 {
        SynthConfig { query_count: count, ..cfg.clone() }.validate()?;
    }
    if corpus.len() != cfg.docs {
        return Err(Error::BadParam(format!(
            "corpus has {} documents, config says {}",
            corpus.len(),
            cfg.docs
        )));
    }
    let d = cfg.dim;
    let c = cfg.cluster_count;
    let noise_sd = cfg.query_noise / (d as f64).sqrt();
    let mut out = Vec::with_capacity(count);
    for q in 0..count {
        let mut rng = SplitMix64::substream(cfg.seed, stream + q as u64);
        let target = rng.index(cfg.docs);
        let doc = &corpus[target];
        if doc.embeddings.dim() != d {
            return Err(Error::DimMismatch {
                expected: d,
                got: doc.embeddings.dim(),
            });
        }

        let mut query = EmbeddingMatrix::zeros(cfg.query_len, d);
        for i in 0..cfg.query_len {
            let src = doc.embeddings.row(rng.index(doc.len()));
            let n = src.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
            for (dst, &x) in query.row_mut(i).iter_mut().zip(src) {
                *dst = (f64::from(x) + noise_sd * n * rng.gaussian()) as f32;
            }
        }

        let topic = cfg.topic_of_doc(target);
        let (mut same, mut other): (Vec<usize>, Vec<usize>) =
            (0..cfg.docs).filter(|&z| z != target).partition(|&z| z % c == topic);
        rng.shuffle(&mut same);
        rng.shuffle(&mut other);
        let wanted = cfg.candidates - 1;
        let n_same = cfg.hard_negatives.min(same.len());
        let n_other = (wanted - n_same).min(other.len());
        let mut cands = vec![target];
        cands.extend_from_slice(&same[..n_same]);
        cands.extend_from_slice(&other[..n_other]);
        // top up from the same topic when other topics run out
        let short = wanted - n_same - n_other;
        cands.extend_from_slice(&same[n_same..(n_same + short).min(same.len())]);
        rng.shuffle(&mut cands);

        let mut teacher = cands
            .iter()
            .map(|&z| {
                Ok(ScoredDoc {
                    doc_id: z as u64,
                    score: maxsim_score(&query, &corpus[z].embeddings)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        sort_scored(&mut teacher);
        out.push(SynthQuery {
            qid: q as u64,
            query,
            target: target as u64,
            candidates: cands.into_iter().map(|z| z as u64).collect(),
            teacher,
        });
    }
    Ok(out)
}

/// Fine-tuning triples: for each query, the teacher's best candidate against
/// every other candidate.
pub fn ranking_triples(queries: &[SynthQuery], corpus: &[DocumentTokens]) -> Result<Vec<RankTriple>> {
    let by_id: HashMap<u64, &DocumentTokens> = corpus.iter().map(|d| (d.doc_id, d)).collect();
    let doc = |id: u64| by_id.get(&id).map(|d| (*d).clone()).ok_or(Error::MissingDoc(id));
    let mut out = Vec::new();
    for q in queries {
        let Some((best, rest)) = q.teacher.split_first() else {
            continue;
        };
        for neg in rest {
            out.push(RankTriple {
                query: q.query.clone(),
                pos_doc: doc(best.doc_id)?,
                neg_doc: doc(neg.doc_id)?,
            });
        }
    }
    Ok(out)
}

/// Exhaustive reference solutions for small instances.
pub mod oracle {
    use std::collections::HashMap;

    use crate::baseline::CodebookSet;
    use crate::error::{Error, Result};
    use crate::types::{Code, EmbeddingMatrix, Mode};

    pub const MAX_KMEANS_POINTS: usize = 12;
    pub const MAX_KMEANS_K: usize = 3;
    pub const MAX_CODE_SEARCH: usize = 4096;

    #[derive(Debug, Clone, PartialEq)]
    pub struct ExhaustiveKMeans {
        pub assignment: Vec<usize>,
        /// `k × dim`, row-major; empty clusters are all zeros.
        pub centroids: Vec<f64>,
        /// Sum of squared distances to the assigned centroid.
        pub sse: f64,
    }

    /// Globally optimal k-means partition found by enumerating every assignment.
    pub fn kmeans_exhaustive(points: &[f64], dim: usize, k: usize) -> Result<ExhaustiveKMeans> {
        if dim == 0 || !points.len().is_multiple_of(dim) {
            return Err(Error::BadParam("points length is not a multiple of dim".into()));
        }
        let n = points.len() / dim;
        if n > MAX_KMEANS_POINTS || k > MAX_KMEANS_K {
            return Err(Error::TooLarge(format!("{n} points, k = {k}")));
        }
        if k == 0 || n < k {
            return Err(Error::TooFewSamples { needed: k.max(1), got: n });
        }
        let total = k.pow(n as u32);
        let mut best: Option<ExhaustiveKMeans> = None;
        let mut assignment = vec![0usize; n];
        for mut idx in 0..total {
            for a in assignment.iter_mut() {
                *a = idx % k;
                idx /= k;
            }
            let mut centroids = vec![0.0; k * dim];
            let mut counts = vec![0usize; k];
            for (i, &a) in assignment.iter().enumerate() {
                counts[a] += 1;
                for j in 0..dim {
                    centroids[a * dim + j] += points[i * dim + j];
                }
            }
            for a in 0..k {
                if counts[a] > 0 {
                    for j in 0..dim {
                        centroids[a * dim + j] /= counts[a] as f64;
                    }
                }
            }
            let sse: f64 = assignment
                .iter()
                .enumerate()
                .map(|(i, &a)| {
                    (0..dim)
                        .map(|j| (points[i * dim + j] - centroids[a * dim + j]).powi(2))
                        .sum::<f64>()
                })
                .sum();
            if best.as_ref().is_none_or(|b| sse < b.sse) {
                best = Some(ExhaustiveKMeans {
                    assignment: assignment.clone(),
                    centroids,
                    sse,
                });
            }
        }
        Ok(best.expect("at least one assignment"))
    }

    /// Double-loop MaxSim in f64.
    pub fn maxsim_bruteforce(query: &EmbeddingMatrix, doc: &EmbeddingMatrix) -> f64 {
        let mut total = 0.0;
        for qi in 0..query.rows() {
            let mut best = f64::NEG_INFINITY;
            for di in 0..doc.rows() {
                let mut s = 0.0;
                for j in 0..query.dim() {
                    s += f64::from(query.row(qi)[j]) * f64::from(doc.row(di)[j]);
                }
                if s > best {
                    best = s;
                }
            }
            total += best;
        }
        total
    }

    /// The code minimizing reconstruction error over all `K^M` codes.
    /// Ties go to the lexicographically smallest code.
    pub fn code_search_bruteforce(cb: &CodebookSet, x: &[f32]) -> Result<Code> {
        let spec = cb.spec();
        let (m, k, d) = (spec.books(), spec.codewords(), spec.dim());
        if x.len() != d {
            return Err(Error::DimMismatch { expected: d, got: x.len() });
        }
        let total = (k as u128).checked_pow(m as u32).unwrap_or(u128::MAX);
        if total > MAX_CODE_SEARCH as u128 {
            return Err(Error::TooLarge(format!("{k}^{m} codes")));
        }
        let mut best = (f64::INFINITY, Code::zeros(m));
        let mut entries = vec![0u32; m];
        for idx in 0..total as usize {
            let mut rest = idx;
            for e in entries.iter_mut().rev() {
                *e = (rest % k) as u32;
                rest /= k;
            }
            let mut recon = vec![0.0; d];
            for (b, &e) in entries.iter().enumerate() {
                let w = cb.codeword(b, e as usize);
                match spec.mode() {
                    Mode::Product => recon[spec.slice_range(b)].copy_from_slice(w),
                    Mode::Additive => recon.iter_mut().zip(w).for_each(|(r, v)| *r += v),
                }
            }
            let err: f64 = recon.iter().zip(x).map(|(r, &v)| (r - f64::from(v)).powi(2)).sum();
            if err < best.0 {
                best = (err, Code::new(entries.clone()));
            }
        }
        Ok(best.1)
    }

    /// Ranked document ids per query, best first.
    pub type RankedLists = [(String, Vec<String>)];
    /// Graded relevance keyed by (query id, document id).
    pub type Judgments = HashMap<(String, String), u32>;

    fn judged<'a>(ranked: &'a RankedLists, rel: &Judgments) -> Vec<&'a (String, Vec<String>)> {
        ranked.iter().filter(|(q, _)| rel.keys().any(|(rq, _)| rq == q)).collect()
    }

    /// Mean reciprocal rank over judged queries, written as a plain double loop.
    pub fn mrr_naive(ranked: &RankedLists, rel: &Judgments, k: usize) -> f64 {
        let queries = judged(ranked, rel);
        let mut total = 0.0;
        for (q, docs) in &queries {
            for (i, d) in docs.iter().take(k).enumerate() {
                if rel.get(&(q.clone(), d.clone())).copied().unwrap_or(0) > 0 {
                    total += 1.0 / (i as f64 + 1.0);
                    break;
                }
            }
        }
        total / queries.len() as f64
    }

    /// Mean NDCG with exponential gain over judged queries.
    pub fn ndcg_naive(ranked: &RankedLists, rel: &Judgments, k: usize) -> f64 {
        let queries = judged(ranked, rel);
        let gain = |g: u32| 2f64.powf(f64::from(g)) - 1.0;
        let discount = |i: usize| (i as f64 + 2.0).log2();
        let mut total = 0.0;
        for (q, docs) in &queries {
            let mut dcg = 0.0;
            for (i, d) in docs.iter().take(k).enumerate() {
                dcg += gain(rel.get(&(q.clone(), d.clone())).copied().unwrap_or(0)) / discount(i);
            }
            let mut grades: Vec<u32> = rel.iter().filter(|((rq, _), _)| rq == q).map(|(_, &g)| g).collect();
            grades.sort_unstable_by(|a, b| b.cmp(a));
            let idcg: f64 = grades.iter().take(k).enumerate().map(|(i, &g)| gain(g) / discount(i)).sum();
            total += if idcg == 0.0 { 0.0 } else { dcg / idcg };
        }
        total / queries.len() as f64
    }

    /// Kendall tau by comparing every pair of positions.
    pub fn kendall_tau_naive(a: &[usize], b: &[usize]) -> f64 {
        let pos = |v: &[usize], x: usize| v.iter().position(|&y| y == x).expect("same item set");
        let n = a.len();
        let mut s = 0i64;
        for i in 0..n {
            for j in i + 1..n {
                s += if pos(b, a[i]) < pos(b, a[j]) { 1 } else { -1 };
            }
        }
        s as f64 / (n * (n - 1) / 2) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            seed: 11,
            vocab: 64,
            docs: 30,
            tokens_per_doc: 10,
            dim: 8,
            cluster_count: 4,
            query_count: 5,
            query_len: 3,
            candidates: 8,
            hard_negatives: 2,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = gen_corpus(&small()).unwrap();
        let b = gen_corpus(&small()).unwrap();
        assert_eq!(a, b);
        let c = gen_corpus(&SynthConfig { seed: 12, ..small() }).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn zero_scale_tokens_equal_base() {
        let (table, docs) = gen_corpus(&SynthConfig { delta_scale: 0.0, ..small() }).unwrap();
        for doc in &docs {
            for (t, &id) in doc.token_ids.iter().enumerate() {
                let base = table.row(id).unwrap();
                for (a, b) in doc.embeddings.row(t).iter().zip(base) {
                    assert!((f64::from(*a) - f64::from(*b)).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn tokens_follow_document_topic() {
        let cfg = small();
        let (table, docs) = gen_corpus(&cfg).unwrap();
        assert_eq!(table.vocab_size(), 64);
        for doc in &docs {
            let topic = doc.doc_id as usize % cfg.cluster_count;
            assert!(doc.token_ids.iter().all(|&id| usize::from(id) % cfg.cluster_count == topic));
        }
    }

    #[test]
    fn candidates_are_well_formed() {
        let cfg = small();
        let (_, docs) = gen_corpus(&cfg).unwrap();
        let qs = gen_queries(&cfg, &docs).unwrap();
        assert_eq!(qs.len(), 5);
        for q in &qs {
            assert_eq!(q.candidates.len(), 8);
            assert!(q.candidates.contains(&q.target));
            let mut sorted = q.candidates.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 8);
            let same = q
                .candidates
                .iter()
                .filter(|&&z| z != q.target && z % 4 == q.target % 4)
                .count();
            assert_eq!(same, 2);
        }
        assert_eq!(qs, gen_queries(&cfg, &docs).unwrap());
        let train = gen_training_queries(&cfg, &docs, 5).unwrap();
        assert_ne!(train[0].query, qs[0].query);
        let triples = ranking_triples(&train, &docs).unwrap();
        assert_eq!(triples.len(), 5 * 7);
        assert_eq!(triples[0].pos_doc.doc_id, train[0].teacher[0].doc_id);
    }

    #[test]
    fn bad_configs() {
        assert!(gen_corpus(&SynthConfig { delta_scale: 1.5, ..small() }).is_err());
        assert!(gen_corpus(&SynthConfig { dim: 0, ..small() }).is_err());
        assert!(gen_corpus(&SynthConfig { candidates: 31, ..small() }).is_err());
        assert!(gen_corpus(&SynthConfig { vocab: 70_000, ..small() }).is_err());
    }

    #[test]
    fn oracle_limits() {
        let pts = vec![0.0; 13];
        assert!(matches!(oracle::kmeans_exhaustive(&pts, 1, 2), Err(Error::TooLarge(_))));
    }
}
