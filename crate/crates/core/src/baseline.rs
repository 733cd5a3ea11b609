//! Classic product (PQ) and residual (RQ) quantizers trained with Lloyd's k-means.

use log::debug;

use crate::error::{Error, Result};
use crate::par;
use crate::rerank::DocumentDecoder;
use crate::rng::SplitMix64;
use crate::types::{check_dim, Code, DocumentCodes, DocumentTokens, EmbeddingMatrix, Mode, QuantizerSpec};

/// M codebooks of K codewords, each codeword `h` wide, stored book-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookSet {
    spec: QuantizerSpec,
    data: Vec<f64>,
}

impl CodebookSet {
    pub fn zeros(spec: QuantizerSpec) -> Self {
        let len = spec.books() * spec.codewords() * spec.sub_dim();
        Self {
            spec,
            data: vec![0.0; len],
        }
    }

    pub fn from_data(spec: QuantizerSpec, data: Vec<f64>) -> Result<Self> {
        let len = spec.books() * spec.codewords() * spec.sub_dim();
        if data.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "codebooks need {len} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("codebooks"));
        }
        Ok(Self { spec, data })
    }

    pub fn spec(&self) -> &QuantizerSpec {
        &self.spec
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Codebook `m` as a K×h row-major block.
    pub fn book(&self, m: usize) -> &[f64] {
        let size = self.spec.codewords() * self.spec.sub_dim();
        &self.data[m * size..(m + 1) * size]
    }

    pub fn book_mut(&mut self, m: usize) -> &mut [f64] {
        let size = self.spec.codewords() * self.spec.sub_dim();
        &mut self.data[m * size..(m + 1) * size]
    }

    pub fn codeword(&self, m: usize, j: usize) -> &[f64] {
        let h = self.spec.sub_dim();
        &self.book(m)[j * h..(j + 1) * h]
    }

    pub fn codeword_mut(&mut self, m: usize, j: usize) -> &mut [f64] {
        let h = self.spec.sub_dim();
        &mut self.book_mut(m)[j * h..(j + 1) * h]
    }

    /// Concatenation (product) or sum (additive) of the selected codewords.
    pub fn decode_f64(&self, code: &Code) -> Result<Vec<f64>> {
        self.spec.validate_code(code)?;
        let mut out = vec![0.0; self.spec.dim()];
        for (m, &j) in code.entries().iter().enumerate() {
            let range = self.spec.slice_range(m);
            for (o, c) in out[range].iter_mut().zip(self.codeword(m, j as usize)) {
                *o += c;
            }
        }
        Ok(out)
    }

    /// Decode with every codeword replaced by the `p`-weighted mixture of its book.
    /// `p` is M×K row-major.
    pub fn soft_decode_f64(&self, p: &[f64]) -> Result<Vec<f64>> {
        let (m_books, k) = (self.spec.books(), self.spec.codewords());
        if p.len() != m_books * k {
            return Err(Error::ShapeMismatch(format!(
                "distribution matrix has {} entries, expected {}",
                p.len(),
                m_books * k
            )));
        }
        for (m, row) in p.chunks_exact(k).enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 || row.iter().any(|&v| v.is_nan() || v < 0.0) {
                return Err(Error::BadDistribution { row: m });
            }
        }
        let h = self.spec.sub_dim();
        let mut out = vec![0.0; self.spec.dim()];
        for m in 0..m_books {
            let range = self.spec.slice_range(m);
            let target = &mut out[range];
            let book = self.book(m);
            for (j, &pj) in p[m * k..(m + 1) * k].iter().enumerate() {
                if pj == 0.0 {
                    continue;
                }
                for (o, c) in target.iter_mut().zip(&book[j * h..(j + 1) * h]) {
                    *o += pj * c;
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmptyClusterPolicy {
    /// Move an empty centroid onto the point farthest from its own centroid.
    ReseedFarthest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansConfig {
    pub iterations: usize,
    pub seed: u64,
    pub empty_cluster_policy: EmptyClusterPolicy,
}

impl KMeansConfig {
    pub fn new(iterations: usize, seed: u64) -> Self {
        Self {
            iterations,
            seed,
            empty_cluster_policy: EmptyClusterPolicy::ReseedFarthest,
        }
    }
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self::new(25, 0)
    }
}

/// Outcome of a Lloyd run on `rows` points of width `dim`.
#[derive(Debug, Clone)]
pub struct KMeans {
    pub dim: usize,
    /// K×dim row-major.
    pub centroids: Vec<f64>,
    /// Mean squared assignment distance measured at each assignment step.
    pub mse_history: Vec<f64>,
}

impl KMeans {
    pub fn centroid(&self, j: usize) -> &[f64] {
        &self.centroids[j * self.dim..(j + 1) * self.dim]
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Index and squared distance of the nearest of the K×dim `centroids`; ties go to the lowest index.
pub(crate) fn nearest(x: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Lloyd's k-means over `points` (rows×dim, row-major).
///
/// Initial centroids are K distinct sample rows picked by a seeded partial
/// Fisher–Yates shuffle. Stops early once assignments stop changing.
pub fn kmeans(points: &[f64], dim: usize, k: usize, cfg: &KMeansConfig) -> Result<KMeans> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::ShapeMismatch(format!(
            "{} values do not form rows of width {dim}",
            points.len()
        )));
    }
    if cfg.iterations == 0 {
        return Err(Error::BadParam("k-means needs at least one iteration".into()));
    }
    let rows = points.len() / dim;
    if rows < k {
        return Err(Error::TooFewSamples { needed: k, got: rows });
    }
    let row = |i: usize| &points[i * dim..(i + 1) * dim];

    let mut rng = SplitMix64::new(cfg.seed);
    let mut centroids = Vec::with_capacity(k * dim);
    for i in rng.sample_indices(rows, k) {
        centroids.extend_from_slice(row(i));
    }

    let mut history: Vec<f64> = Vec::with_capacity(cfg.iterations);
    let mut prev_assign: Option<Vec<usize>> = None;
    for it in 0..cfg.iterations {
        let assigned = par::map_range(rows, |i| nearest(row(i), &centroids, dim));
        let mse = assigned.iter().map(|a| a.1).sum::<f64>() / rows as f64;
        if let Some(&last) = history.last() {
            debug_assert!(
                mse <= last + 1e-12 * last.abs().max(1e-300),
                "k-means MSE increased: {last} -> {mse}"
            );
        }
        history.push(mse);
        let assign: Vec<usize> = assigned.iter().map(|a| a.0).collect();
        if prev_assign.as_ref() == Some(&assign) {
            debug!("k-means converged after {it} iterations, mse {mse}");
            break;
        }

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &j) in assign.iter().enumerate() {
            counts[j] += 1;
            for (s, x) in sums[j * dim..(j + 1) * dim].iter_mut().zip(row(i)) {
                *s += x;
            }
        }
        let mut dist: Vec<f64> = assigned.iter().map(|a| a.1).collect();
        for j in 0..k {
            let c = &mut centroids[j * dim..(j + 1) * dim];
            if counts[j] > 0 {
                let n = counts[j] as f64;
                for (cv, s) in c.iter_mut().zip(&sums[j * dim..(j + 1) * dim]) {
                    *cv = s / n;
                }
            } else {
                match cfg.empty_cluster_policy {
                    EmptyClusterPolicy::ReseedFarthest => {
                        let far = (0..rows)
                            .fold(0, |best, i| if dist[i] > dist[best] { i } else { best });
                        c.copy_from_slice(row(far));
                        dist[far] = f64::NEG_INFINITY;
                    }
                }
            }
        }
        prev_assign = Some(assign);
    }

    Ok(KMeans {
        dim,
        centroids,
        mse_history: history,
    })
}

fn widen(samples: &EmbeddingMatrix) -> Vec<f64> {
    samples.as_slice().iter().map(|&v| f64::from(v)).collect()
}

/// One k-means per h-wide subspace.
pub fn train_pq(samples: &EmbeddingMatrix, spec: &QuantizerSpec, cfg: &KMeansConfig) -> Result<CodebookSet> {
    if spec.mode() != Mode::Product {
        return Err(Error::BadParam("train_pq needs a product spec".into()));
    }
    check_dim(spec.dim(), samples.dim())?;
    if samples.rows() < spec.codewords() {
        return Err(Error::TooFewSamples {
            needed: spec.codewords(),
            got: samples.rows(),
        });
    }
    let h = spec.sub_dim();
    let mut cb = CodebookSet::zeros(*spec);
    for m in 0..spec.books() {
        let range = spec.slice_range(m);
        let slice: Vec<f64> = samples
            .iter_rows()
            .flat_map(|r| r[range.clone()].iter().map(|&v| f64::from(v)))
            .collect();
        let sub_cfg = KMeansConfig {
            seed: SplitMix64::substream(cfg.seed, m as u64).next_u64(),
            ..*cfg
        };
        let km = kmeans(&slice, h, spec.codewords(), &sub_cfg)?;
        cb.book_mut(m).copy_from_slice(&km.centroids);
    }
    Ok(cb)
}

/// Stage-wise k-means on the residuals left by the previous stages.
pub fn train_rq(samples: &EmbeddingMatrix, spec: &QuantizerSpec, cfg: &KMeansConfig) -> Result<CodebookSet> {
    if spec.mode() != Mode::Additive {
        return Err(Error::BadParam("train_rq needs an additive spec".into()));
    }
    check_dim(spec.dim(), samples.dim())?;
    if samples.rows() < spec.codewords() {
        return Err(Error::TooFewSamples {
            needed: spec.codewords(),
            got: samples.rows(),
        });
    }
    let d = spec.dim();
    let mut residuals = widen(samples);
    let mut cb = CodebookSet::zeros(*spec);
    for m in 0..spec.books() {
        let sub_cfg = KMeansConfig {
            seed: SplitMix64::substream(cfg.seed, m as u64).next_u64(),
            ..*cfg
        };
        let km = kmeans(&residuals, d, spec.codewords(), &sub_cfg)?;
        let picks = par::map_range(samples.rows(), |i| {
            nearest(&residuals[i * d..(i + 1) * d], &km.centroids, d).0
        });
        for (r, j) in residuals.chunks_exact_mut(d).zip(picks) {
            for (rv, c) in r.iter_mut().zip(km.centroid(j)) {
                *rv -= c;
            }
        }
        cb.book_mut(m).copy_from_slice(&km.centroids);
    }
    Ok(cb)
}

/// Mean squared residual norm after each stage of greedy encoding
/// (entry 0 is before any stage).
pub fn stage_mse(cb: &CodebookSet, samples: &EmbeddingMatrix) -> Result<Vec<f64>> {
    let spec = cb.spec();
    check_dim(spec.dim(), samples.dim())?;
    let mut out = vec![0.0; spec.books() + 1];
    if samples.is_empty() {
        return Ok(out);
    }
    for r in samples.iter_rows() {
        let mut res: Vec<f64> = r.iter().map(|&v| f64::from(v)).collect();
        out[0] += res.iter().map(|v| v * v).sum::<f64>();
        for m in 0..spec.books() {
            let range = spec.slice_range(m);
            let (j, _) = nearest(&res[range.clone()], cb.book(m), spec.sub_dim());
            for (rv, c) in res[range].iter_mut().zip(cb.codeword(m, j)) {
                *rv -= c;
            }
            out[m + 1] += res.iter().map(|v| v * v).sum::<f64>();
        }
    }
    let n = samples.rows() as f64;
    Ok(out.into_iter().map(|s| s / n).collect())
}

pub(crate) fn encode_f64(cb: &CodebookSet, x: &[f64]) -> Code {
    let spec = cb.spec();
    let h = spec.sub_dim();
    match spec.mode() {
        Mode::Product => Code::new(
            (0..spec.books())
                .map(|m| nearest(&x[spec.slice_range(m)], cb.book(m), h).0 as u32)
                .collect(),
        ),
        Mode::Additive => {
            let mut res = x.to_vec();
            let mut entries = Vec::with_capacity(spec.books());
            for m in 0..spec.books() {
                let (j, _) = nearest(&res, cb.book(m), h);
                for (r, c) in res.iter_mut().zip(cb.codeword(m, j)) {
                    *r -= c;
                }
                entries.push(j as u32);
            }
            Code::new(entries)
        }
    }
}

/// Nearest code: per-subspace argmin (product) or greedy stage-wise argmin (additive).
pub fn encode_baseline(cb: &CodebookSet, x: &[f32]) -> Result<Code> {
    check_dim(cb.spec().dim(), x.len())?;
    let xw: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
    Ok(encode_f64(cb, &xw))
}

pub fn decode_baseline(cb: &CodebookSet, code: &Code) -> Result<Vec<f32>> {
    Ok(cb.decode_f64(code)?.into_iter().map(|v| v as f32).collect())
}

/// Encode every token of a document.
pub fn encode_document(cb: &CodebookSet, doc: &DocumentTokens) -> Result<DocumentCodes> {
    check_dim(cb.spec().dim(), doc.embeddings.dim())?;
    let codes = doc
        .embeddings
        .iter_rows()
        .map(|r| encode_baseline(cb, r))
        .collect::<Result<Vec<_>>>()?;
    DocumentCodes::new(doc.doc_id, doc.token_ids.clone(), codes)
}

/// Encode and decode every row, e.g. to measure reconstruction error.
pub fn reconstruct_matrix(cb: &CodebookSet, x: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    check_dim(cb.spec().dim(), x.dim())?;
    let rows = par::try_map_range(x.rows(), |i| {
        let code = encode_baseline(cb, x.row(i))?;
        decode_baseline(cb, &code)
    })?;
    EmbeddingMatrix::new(x.rows(), x.dim(), rows.concat())
}

impl DocumentDecoder for CodebookSet {
    fn spec(&self) -> &QuantizerSpec {
        &self.spec
    }

    fn reconstruct(&self, codes: &DocumentCodes) -> Result<EmbeddingMatrix> {
        let mut data = Vec::with_capacity(codes.len() * self.spec.dim());
        for c in &codes.codes {
            data.extend(self.decode_f64(c)?.into_iter().map(|v| v as f32));
        }
        EmbeddingMatrix::new(codes.len(), self.spec.dim(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(dim: usize, rows: &[&[f32]]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(dim, &rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn sorted_book(cb: &CodebookSet, m: usize) -> Vec<f64> {
        let mut v = cb.book(m).to_vec();
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn pq_on_four_points() {
        let x = matrix(2, &[&[0.0, 0.0], &[0.0, 1.0], &[10.0, 0.0], &[10.0, 1.0]]);
        let spec = QuantizerSpec::new(Mode::Product, 2, 2, 2).unwrap();
        for seed in 0..20 {
            let cb = train_pq(&x, &spec, &KMeansConfig::new(10, seed)).unwrap();
            assert_eq!(sorted_book(&cb, 0), vec![0.0, 10.0]);
            assert_eq!(sorted_book(&cb, 1), vec![0.0, 1.0]);
        }
    }

    #[test]
    fn pq_too_few_samples() {
        let x = matrix(2, &[&[0.0, 0.0]]);
        let spec = QuantizerSpec::new(Mode::Product, 2, 2, 2).unwrap();
        assert!(matches!(
            train_pq(&x, &spec, &KMeansConfig::default()),
            Err(Error::TooFewSamples { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn rq_on_collinear_points() {
        let x = matrix(1, &[&[0.0], &[1.0], &[10.0], &[11.0]]);
        let spec = QuantizerSpec::new(Mode::Additive, 2, 2, 1).unwrap();
        for seed in 0..20 {
            let cb = train_rq(&x, &spec, &KMeansConfig::new(10, seed)).unwrap();
            assert_eq!(sorted_book(&cb, 0), vec![0.5, 10.5]);
            assert_eq!(sorted_book(&cb, 1), vec![-0.5, 0.5]);
            let recon = reconstruct_matrix(&cb, &x).unwrap();
            assert_eq!(recon, x);
        }
    }

    #[test]
    fn rq_single_repeated_point() {
        let x = matrix(3, &[&[1.0f32, -2.0, 3.0][..]; 5]);
        let spec = QuantizerSpec::new(Mode::Additive, 3, 2, 3).unwrap();
        let cb = train_rq(&x, &spec, &KMeansConfig::new(5, 1)).unwrap();
        for j in 0..2 {
            assert_eq!(cb.codeword(0, j), &[1.0, -2.0, 3.0]);
            assert_eq!(cb.codeword(1, j), &[0.0, 0.0, 0.0]);
            assert_eq!(cb.codeword(2, j), &[0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn encode_exact_concatenation() {
        let spec = QuantizerSpec::new(Mode::Product, 2, 4, 2).unwrap();
        let cb = CodebookSet::from_data(spec, vec![0.0, 1.0, 2.0, 3.0, 10.0, 11.0, 12.0, 13.0]).unwrap();
        let code = encode_baseline(&cb, &[3.0, 11.0]).unwrap();
        assert_eq!(code.entries(), &[3, 1]);
        assert_eq!(decode_baseline(&cb, &code).unwrap(), vec![3.0, 11.0]);
    }

    #[test]
    fn identical_codewords_tie_to_zero() {
        let spec = QuantizerSpec::new(Mode::Additive, 3, 4, 2).unwrap();
        let cb = CodebookSet::from_data(spec, vec![0.5; 3 * 4 * 2]).unwrap();
        let code = encode_baseline(&cb, &[7.0, -1.0]).unwrap();
        assert_eq!(code.entries(), &[0, 0, 0]);
    }

    #[test]
    fn decode_examples() {
        let spec = QuantizerSpec::new(Mode::Product, 2, 2, 2).unwrap();
        let cb = CodebookSet::from_data(spec, vec![5.0, 0.0, 7.0, 0.0]).unwrap();
        assert_eq!(decode_baseline(&cb, &Code::new(vec![0, 0])).unwrap(), vec![5.0, 7.0]);

        let spec = QuantizerSpec::new(Mode::Additive, 2, 2, 2).unwrap();
        let cb = CodebookSet::from_data(spec, vec![1.0, 2.0, 0.0, 0.0, 10.0, 20.0, 0.0, 0.0]).unwrap();
        assert_eq!(decode_baseline(&cb, &Code::new(vec![0, 0])).unwrap(), vec![11.0, 22.0]);
        assert!(matches!(
            decode_baseline(&cb, &Code::new(vec![0, 2])),
            Err(Error::BadCode(_))
        ));
    }

    #[test]
    fn dim_mismatch() {
        let spec = QuantizerSpec::new(Mode::Product, 2, 2, 2).unwrap();
        let cb = CodebookSet::zeros(spec);
        assert!(matches!(
            encode_baseline(&cb, &[1.0]),
            Err(Error::DimMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn kmeans_history_is_monotone() {
        let mut rng = SplitMix64::new(11);
        let pts: Vec<f64> = (0..300 * 3).map(|_| rng.gaussian()).collect();
        let km = kmeans(&pts, 3, 8, &KMeansConfig::new(30, 4)).unwrap();
        for w in km.mse_history.windows(2) {
            assert!(w[1] <= w[0], "{:?}", km.mse_history);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = SplitMix64::new(2);
        let data: Vec<f32> = (0..200 * 4).map(|_| rng.gaussian() as f32).collect();
        let x = EmbeddingMatrix::new(200, 4, data).unwrap();
        let spec = QuantizerSpec::new(Mode::Product, 2, 8, 4).unwrap();
        let cfg = KMeansConfig::new(15, 99);
        assert_eq!(train_pq(&x, &spec, &cfg).unwrap(), train_pq(&x, &spec, &cfg).unwrap());
        let spec = QuantizerSpec::new(Mode::Additive, 2, 8, 4).unwrap();
        assert_eq!(train_rq(&x, &spec, &cfg).unwrap(), train_rq(&x, &spec, &cfg).unwrap());
    }

    #[test]
    fn rq_stage_mse_non_increasing() {
        let mut rng = SplitMix64::new(8);
        let data: Vec<f32> = (0..300 * 6).map(|_| rng.gaussian() as f32).collect();
        let x = EmbeddingMatrix::new(300, 6, data).unwrap();
        let spec = QuantizerSpec::new(Mode::Additive, 4, 8, 6).unwrap();
        let cb = train_rq(&x, &spec, &KMeansConfig::new(20, 3)).unwrap();
        let mse = stage_mse(&cb, &x).unwrap();
        for w in mse.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{mse:?}");
        }
    }

    #[test]
    fn soft_decode_validates_rows() {
        let spec = QuantizerSpec::new(Mode::Product, 1, 2, 1).unwrap();
        let cb = CodebookSet::from_data(spec, vec![0.0, 4.0]).unwrap();
        assert_eq!(cb.soft_decode_f64(&[0.25, 0.75]).unwrap(), vec![3.0]);
        assert!(matches!(
            cb.soft_decode_f64(&[0.5, 0.6]),
            Err(Error::BadDistribution { row: 0 })
        ));
    }
}
