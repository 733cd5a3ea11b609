//! Ranking metrics, TREC run/qrels files and teacher–student fidelity.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::hash::Hash;
use std::io::{self, Write};

use log::warn;

use crate::error::{Error, Result};
use crate::rerank::ScoredDoc;

#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub doc_id: String,
    pub score: f64,
}

/// Ranked results per query, best first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Run {
    queries: BTreeMap<String, Vec<RunEntry>>,
}

impl Run {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add a query's results. Entries are stably sorted by descending score.
    pub fn insert(&mut self, qid: impl Into<String>, mut entries: Vec<RunEntry>) -> Result<()> {
        let qid = qid.into();
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !e.score.is_finite() {
                return Err(Error::NonFinite("run score"));
            }
            if !seen.insert(e.doc_id.as_str()) {
                return Err(Error::BadParam(format!("query {qid}: duplicate document {}", e.doc_id)));
            }
        }
        entries.sort_by(|a, b| b.score.total_cmp(&a.score));
        self.queries.insert(qid, entries);
        Ok(())
    }

    pub fn insert_scored(&mut self, qid: impl Into<String>, docs: &[ScoredDoc]) -> Result<()> {
        self.insert(
            qid,
            docs.iter()
                .map(|d| RunEntry {
                    doc_id: d.doc_id.to_string(),
                    score: d.score,
                })
                .collect(),
        )
    }

    pub fn get(&self, qid: &str) -> Option<&[RunEntry]> {
        self.queries.get(qid).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[RunEntry])> {
        self.queries.iter().map(|(q, e)| (q.as_str(), e.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// Graded judgments: query → document → grade.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, HashMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, qid: impl Into<String>, doc_id: impl Into<String>, grade: u32) {
        self.judgments.entry(qid.into()).or_default().insert(doc_id.into(), grade);
    }

    pub fn grade(&self, qid: &str, doc_id: &str) -> u32 {
        self.judgments
            .get(qid)
            .and_then(|m| m.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn query(&self, qid: &str) -> Option<&HashMap<String, u32>> {
        self.judgments.get(qid)
    }
}

type JudgedQuery<'a> = (&'a str, &'a [RunEntry], &'a HashMap<String, u32>);

/// Queries of `run` that have judgments; the rest are logged and skipped.
fn judged<'a>(run: &'a Run, qrels: &'a Qrels) -> Result<Vec<JudgedQuery<'a>>> {
    let mut out = Vec::new();
    let mut skipped = 0;
    for (q, entries) in run.iter() {
        match qrels.query(q) {
            Some(j) => out.push((q, entries, j)),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        warn!("{skipped} queries without judgments skipped");
    }
    if out.is_empty() {
        return Err(Error::EmptyRun);
    }
    Ok(out)
}

/// Mean reciprocal rank of the first document with grade ≥ 1 within the top `k`.
pub fn mrr_at_k(run: &Run, qrels: &Qrels, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::BadParam("cutoff must be at least 1".into()));
    }
    let queries = judged(run, qrels)?;
    let total: f64 = queries
        .iter()
        .map(|(_, entries, j)| {
            entries
                .iter()
                .take(k)
                .position(|e| j.get(&e.doc_id).is_some_and(|&g| g >= 1))
                .map_or(0.0, |r| 1.0 / (r + 1) as f64)
        })
        .sum();
    let mrr = total / queries.len() as f64;
    assert!((0.0..=1.0).contains(&mrr));
    Ok(mrr)
}

fn gain(grade: u32) -> f64 {
    2f64.powi(grade as i32) - 1.0
}

/// NDCG with exponential gain `2^g - 1` and `log2(rank + 1)` discount.
pub fn ndcg_at_k(run: &Run, qrels: &Qrels, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::BadParam("cutoff must be at least 1".into()));
    }
    let queries = judged(run, qrels)?;
    let total: f64 = queries
        .iter()
        .map(|(_, entries, j)| {
            let dcg: f64 = entries
                .iter()
                .take(k)
                .enumerate()
                .map(|(r, e)| gain(j.get(&e.doc_id).copied().unwrap_or(0)) / ((r + 2) as f64).log2())
                .sum();
            let mut ideal: Vec<u32> = j.values().copied().collect();
            ideal.sort_unstable_by(|a, b| b.cmp(a));
            let idcg: f64 = ideal
                .iter()
                .take(k)
                .enumerate()
                .map(|(r, &g)| gain(g) / ((r + 2) as f64).log2())
                .sum();
            if idcg > 0.0 {
                dcg / idcg
            } else {
                0.0
            }
        })
        .sum();
    let ndcg = total / queries.len() as f64;
    assert!((0.0..=1.0 + 1e-12).contains(&ndcg));
    Ok(ndcg.min(1.0))
}

pub fn ndcg_at_10(run: &Run, qrels: &Qrels) -> Result<f64> {
    ndcg_at_k(run, qrels, 10)
}

/// Merge sort that returns the number of inversions.
fn count_inversions(v: &mut [usize]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut inv = count_inversions(&mut v[..mid]) + count_inversions(&mut v[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[i] <= v[j] {
            merged.push(v[i]);
            i += 1;
        } else {
            merged.push(v[j]);
            inv += (mid - i) as u64;
            j += 1;
        }
    }
    merged.extend_from_slice(&v[i..mid]);
    merged.extend_from_slice(&v[j..n]);
    v.copy_from_slice(&merged);
    inv
}

/// Kendall's τ-a between two orderings of the same items.
pub fn kendall_tau<T: Eq + Hash>(a: &[T], b: &[T]) -> Result<f64> {
    let n = a.len();
    if n < 2 || b.len() != n {
        return Err(Error::NotPermutation);
    }
    let pos: HashMap<&T, usize> = b.iter().enumerate().map(|(i, x)| (x, i)).collect();
    if pos.len() != n {
        return Err(Error::NotPermutation);
    }
    let mut seq = Vec::with_capacity(n);
    let mut seen = HashSet::with_capacity(n);
    for x in a {
        let &p = pos.get(x).ok_or(Error::NotPermutation)?;
        if !seen.insert(p) {
            return Err(Error::NotPermutation);
        }
        seq.push(p);
    }
    let pairs = (n as u64) * (n as u64 - 1) / 2;
    let discordant = count_inversions(&mut seq);
    let tau = (pairs as f64 - 2.0 * discordant as f64) / pairs as f64;
    assert!((-1.0..=1.0).contains(&tau));
    Ok(tau)
}

// ---------------------------------------------------------------------------
// TREC files

/// `qid Q0 docid rank score tag`, one line per entry, ranks 1-based.
pub fn format_run(run: &Run, tag: &str) -> String {
    let mut out = String::new();
    for (q, entries) in run.iter() {
        for (r, e) in entries.iter().enumerate() {
            writeln!(out, "{q} Q0 {} {} {} {tag}", e.doc_id, r + 1, e.score).expect("write to string");
        }
    }
    out
}

pub fn write_run<W: Write>(mut w: W, run: &Run, tag: &str) -> io::Result<()> {
    w.write_all(format_run(run, tag).as_bytes())
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

/// Parse a run. The rank column is ignored: order comes from the score,
/// ties keep file order.
pub fn parse_run(text: &str) -> Result<Run> {
    let mut per_query: BTreeMap<String, Vec<RunEntry>> = BTreeMap::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 6 {
            return Err(parse_err(lineno, format!("expected 6 fields, found {}", fields.len())));
        }
        fields[3]
            .parse::<u64>()
            .map_err(|_| parse_err(lineno, format!("bad rank {:?}", fields[3])))?;
        let score: f64 = fields[4]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad score {:?}", fields[4])))?;
        if !score.is_finite() {
            return Err(parse_err(lineno, "score is not finite"));
        }
        let (q, d) = (fields[0].to_string(), fields[2].to_string());
        if !seen.insert((q.clone(), d.clone())) {
            return Err(parse_err(lineno, format!("duplicate document {d} for query {q}")));
        }
        per_query.entry(q).or_default().push(RunEntry { doc_id: d, score });
    }
    let mut run = Run::new();
    for (q, entries) in per_query {
        run.insert(q, entries)?;
    }
    Ok(run)
}

/// Parse `qid 0 docid grade` lines.
pub fn parse_qrels(text: &str) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 4 {
            return Err(parse_err(lineno, format!("expected 4 fields, found {}", fields.len())));
        }
        let grade: u32 = fields[3]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad grade {:?}", fields[3])))?;
        qrels.insert(fields[0], fields[2], grade);
    }
    Ok(qrels)
}

/// `qid 0 docid grade` lines, sorted by query then document.
pub fn format_qrels(qrels: &Qrels) -> String {
    let mut out = String::new();
    for (q, docs) in &qrels.judgments {
        let mut docs: Vec<_> = docs.iter().collect();
        docs.sort();
        for (d, g) in docs {
            writeln!(out, "{q} 0 {d} {g}").expect("write to string");
        }
    }
    out
}

// ---------------------------------------------------------------------------
// fidelity

#[derive(Debug, Clone, PartialEq)]
pub struct ScorePair {
    pub qid: String,
    pub doc_id: String,
    pub teacher: f64,
    pub student: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FidelityReport {
    /// Kendall τ between teacher and student orderings, per query.
    pub per_query: Vec<(String, f64)>,
    pub pairs: Vec<ScorePair>,
}

impl FidelityReport {
    pub fn median_tau(&self) -> Option<f64> {
        median(self.per_query.iter().map(|p| p.1).collect())
    }

    pub fn mean_tau(&self) -> Option<f64> {
        if self.per_query.is_empty() {
            None
        } else {
            Some(self.per_query.iter().map(|p| p.1).sum::<f64>() / self.per_query.len() as f64)
        }
    }

    /// Tab-separated `qid docid teacher student` table with a header.
    pub fn pairs_table(&self) -> String {
        let mut out = String::from("qid\tdocid\tteacher\tstudent\n");
        for p in &self.pairs {
            writeln!(out, "{}\t{}\t{}\t{}", p.qid, p.doc_id, p.teacher, p.student).expect("write to string");
        }
        out
    }
}

pub fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Per-query agreement between a teacher run and a student run over the same documents.
/// Queries with fewer than two documents have no τ.
pub fn fidelity_report(teacher: &Run, student: &Run) -> Result<FidelityReport> {
    if teacher.len() != student.len() {
        return Err(Error::MismatchedSets);
    }
    let mut report = FidelityReport {
        per_query: Vec::new(),
        pairs: Vec::new(),
    };
    for (q, t_entries) in teacher.iter() {
        let s_entries = student.get(q).ok_or(Error::MismatchedSets)?;
        if s_entries.len() != t_entries.len() {
            return Err(Error::MismatchedSets);
        }
        let s_scores: HashMap<&str, f64> = s_entries.iter().map(|e| (e.doc_id.as_str(), e.score)).collect();
        for e in t_entries {
            let &s = s_scores.get(e.doc_id.as_str()).ok_or(Error::MismatchedSets)?;
            report.pairs.push(ScorePair {
                qid: q.to_string(),
                doc_id: e.doc_id.clone(),
                teacher: e.score,
                student: s,
            });
        }
        if t_entries.len() >= 2 {
            let a: Vec<&str> = t_entries.iter().map(|e| e.doc_id.as_str()).collect();
            let b: Vec<&str> = s_entries.iter().map(|e| e.doc_id.as_str()).collect();
            report.per_query.push((q.to_string(), kendall_tau(&a, &b)?));
        }
    }
    Ok(report)
}
