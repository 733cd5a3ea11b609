//! Text side files: candidate lists and teacher runs as training triples.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use ctxquant::codestore::EmbeddingFile;
use ctxquant::eval::Run;
use ctxquant::train::RankTriple;
use ctxquant::{DocumentTokens, EmbeddingMatrix, Error, Result};

pub fn read_text(path: &Path) -> Result<String> {
    Ok(std::fs::read_to_string(path)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    Ok(std::fs::write(path, text)?)
}

/// `qid docid` per line.
pub fn format_candidates(lists: &[(u64, Vec<u64>)]) -> String {
    let mut out = String::new();
    for (q, docs) in lists {
        for d in docs {
            writeln!(out, "{q} {d}").expect("write to string");
        }
    }
    out
}

pub fn parse_candidates(text: &str) -> Result<BTreeMap<u64, Vec<u64>>> {
    let mut out: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse { line: i + 1, msg };
        if fields.len() != 2 {
            return Err(bad(format!("expected 2 fields, found {}", fields.len())));
        }
        let q = fields[0].parse().map_err(|_| bad(format!("bad query id {:?}", fields[0])))?;
        let d = fields[1].parse().map_err(|_| bad(format!("bad document id {:?}", fields[1])))?;
        out.entry(q).or_default().push(d);
    }
    Ok(out)
}

/// Queries stored as an embedding file: one entry per query, id = query id.
pub fn queries_by_id(file: &EmbeddingFile) -> HashMap<u64, &EmbeddingMatrix> {
    file.docs.iter().map(|d| (d.doc_id, &d.embeddings)).collect()
}

/// The teacher's best document for each query against each of the others.
pub fn triples_from_run(run: &Run, queries: &EmbeddingFile, corpus: &[DocumentTokens]) -> Result<Vec<RankTriple>> {
    let qs = queries_by_id(queries);
    let docs: HashMap<String, &DocumentTokens> = corpus.iter().map(|d| (d.doc_id.to_string(), d)).collect();
    let doc = |id: &str| {
        docs.get(id)
            .map(|d| (*d).clone())
            .ok_or_else(|| Error::BadParam(format!("teacher run names unknown document {id}")))
    };
    let mut out = Vec::new();
    for (qid, entries) in run.iter() {
        let query = qid
            .parse::<u64>()
            .ok()
            .and_then(|q| qs.get(&q))
            .ok_or_else(|| Error::BadParam(format!("teacher run names unknown query {qid}")))?;
        let Some((best, rest)) = entries.split_first() else {
            continue;
        };
        for neg in rest {
            out.push(RankTriple {
                query: (*query).clone(),
                pos_doc: doc(&best.doc_id)?,
                neg_doc: doc(&neg.doc_id)?,
            });
        }
    }
    Ok(out)
}
