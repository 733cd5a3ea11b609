//! The contextual quantizer network.
//!
//! The encoder maps a token's contextual embedding together with its
//! document-independent embedding to an M-entry code:
//!
//! ```text
//! h   = tanh(w0 · (e_t ∘ e_bar) + b0)                 (MK/2 hidden units)
//! a^m = softplus(w1^m · h + b1^m)                     (K per codebook)
//! p^m = softmax((log a^m + ε) / τ)                    (Gumbel-softmax)
//! s_m = argmax_j p^m_j
//! ```
//!
//! The decoder fetches one codeword per book to get the document-dependent
//! part, then one tanh layer recomposes it with the stored
//! document-independent embedding:
//!
//! ```text
//! Δ̂   = c^1_{s_1} ∘ … ∘ c^M_{s_M}    (product)  or  Σ_m c^m_{s_m}  (additive)
//! ê_t = tanh(w2 · (Δ̂ ∘ e_bar) + b2)
//! ```
//!
//! Training uses the soft path, where each codeword is replaced by the
//! `p^m`-weighted mixture of its codebook; inference uses the hard argmax
//! code with the noise switched off.

use crate::baseline::CodebookSet;
use crate::error::{Error, Result};
use crate::par;
use crate::rerank::DocumentDecoder;
use crate::rng::SplitMix64;
use crate::types::{check_dim, Code, DocumentCodes, DocumentTokens, EmbeddingMatrix, QuantizerSpec, TokenId};

/// Lower clamp for the uniform draw behind each Gumbel sample.
pub const GUMBEL_U_MIN: f64 = 1e-10;

/// Trainable weights of the quantizer. All matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CQParams {
    spec: QuantizerSpec,
    use_position: bool,
    /// hidden × input, input = 2D (3D with the position feature)
    pub w0: Vec<f64>,
    pub b0: Vec<f64>,
    /// M blocks of K × hidden
    pub w1: Vec<f64>,
    /// M × K
    pub b1: Vec<f64>,
    /// D × 2D
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub codebooks: CodebookSet,
}

/// Shapes of every parameter tensor, derived from a spec.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shapes {
    pub dim: usize,
    pub books: usize,
    pub codewords: usize,
    pub hidden: usize,
    pub input: usize,
}

impl Shapes {
    pub fn new(spec: &QuantizerSpec, use_position: bool) -> Result<Self> {
        let mk = spec.books() * spec.codewords();
        if !mk.is_multiple_of(2) {
            return Err(Error::BadParam(format!("M*K = {mk} must be even")));
        }
        let dim = spec.dim();
        Ok(Self {
            dim,
            books: spec.books(),
            codewords: spec.codewords(),
            hidden: mk / 2,
            input: if use_position { 3 * dim } else { 2 * dim },
        })
    }

    /// Lengths of w0, b0, w1, b1, w2, b2 in that order.
    pub fn lens(&self) -> [usize; 6] {
        [
            self.hidden * self.input,
            self.hidden,
            self.books * self.codewords * self.hidden,
            self.books * self.codewords,
            self.dim * 2 * self.dim,
            self.dim,
        ]
    }
}

fn glorot(rng: &mut SplitMix64, len: usize, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..len).map(|_| rng.uniform(-r, r)).collect()
}

impl CQParams {
    /// All weights and biases zero.
    pub fn zeros(spec: QuantizerSpec, use_position: bool) -> Result<Self> {
        let s = Shapes::new(&spec, use_position)?;
        let [l0, lb0, l1, lb1, l2, lb2] = s.lens();
        Ok(Self {
            spec,
            use_position,
            w0: vec![0.0; l0],
            b0: vec![0.0; lb0],
            w1: vec![0.0; l1],
            b1: vec![0.0; lb1],
            w2: vec![0.0; l2],
            b2: vec![0.0; lb2],
            codebooks: CodebookSet::zeros(spec),
        })
    }

    /// Scaled uniform init, `r = sqrt(6 / (fan_in + fan_out))` per matrix; zero biases.
    pub fn init(spec: QuantizerSpec, use_position: bool, seed: u64) -> Result<Self> {
        let s = Shapes::new(&spec, use_position)?;
        let mut p = Self::zeros(spec, use_position)?;
        let mut rng = SplitMix64::new(seed);
        p.w0 = glorot(&mut rng, p.w0.len(), s.input, s.hidden);
        p.w1 = glorot(&mut rng, p.w1.len(), s.hidden, s.codewords);
        p.w2 = glorot(&mut rng, p.w2.len(), 2 * s.dim, s.dim);
        let h = spec.sub_dim();
        let books = glorot(&mut rng, p.codebooks.as_slice().len(), s.codewords, h);
        p.codebooks.as_mut_slice().copy_from_slice(&books);
        Ok(p)
    }

    /// Assemble from raw tensors, checking every shape.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        spec: QuantizerSpec,
        use_position: bool,
        w0: Vec<f64>,
        b0: Vec<f64>,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
        codebooks: CodebookSet,
    ) -> Result<Self> {
        let s = Shapes::new(&spec, use_position)?;
        let p = Self {
            spec,
            use_position,
            w0,
            b0,
            w1,
            b1,
            w2,
            b2,
            codebooks,
        };
        let got = [p.w0.len(), p.b0.len(), p.w1.len(), p.b1.len(), p.w2.len(), p.b2.len()];
        if got != s.lens() {
            return Err(Error::ShapeMismatch(format!(
                "tensor lengths {got:?}, expected {:?}",
                s.lens()
            )));
        }
        if p.codebooks.spec() != &spec {
            return Err(Error::ShapeMismatch("codebook spec differs from model spec".into()));
        }
        if p.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(p)
    }

    pub fn spec(&self) -> &QuantizerSpec {
        &self.spec
    }

    pub fn use_position(&self) -> bool {
        self.use_position
    }

    pub fn shapes(&self) -> Shapes {
        Shapes::new(&self.spec, self.use_position).expect("validated at construction")
    }

    /// w0, b0, w1, b1, w2, b2, codebooks.
    pub fn tensors(&self) -> [&[f64]; 7] {
        [
            &self.w0,
            &self.b0,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            self.codebooks.as_slice(),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 7] {
        [
            &mut self.w0,
            &mut self.b0,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            self.codebooks.as_mut_slice(),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Temperature, noise and hard/soft switch for the Gumbel-softmax.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GumbelConfig {
    pub tau: f64,
    pub seed: u64,
    /// Decode with the argmax code rather than the soft mixture.
    pub hard: bool,
    /// Add Gumbel noise to the logits.
    pub noise: bool,
}

impl GumbelConfig {
    /// Deterministic offline encoding: τ = 1, argmax codes, no noise.
    pub fn inference() -> Self {
        Self {
            tau: 1.0,
            seed: 0,
            hard: true,
            noise: false,
        }
    }

    /// Stochastic soft relaxation used while training.
    pub fn training(seed: u64) -> Self {
        Self {
            tau: 1.0,
            seed,
            hard: false,
            noise: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::BadParam(format!("temperature must be positive, got {}", self.tau)));
        }
        Ok(())
    }

    /// Gumbel noise for `len` logits of substream `stream`, or `None` when noise is off.
    pub fn noise_for(&self, stream: u64, len: usize) -> Option<Vec<f64>> {
        if !self.noise {
            return None;
        }
        let mut rng = SplitMix64::substream(self.seed, stream);
        Some((0..len).map(|_| gumbel_from_uniform(rng.next_f64())).collect())
    }
}

/// `-ln(-ln u)` with `u` clamped away from 0 and 1.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(GUMBEL_U_MIN, 1.0 - GUMBEL_U_MIN);
    -(-u.ln()).ln()
}

/// Per-vocabulary table of document-independent embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct DocIndepTable {
    rows: EmbeddingMatrix,
}

impl DocIndepTable {
    pub fn new(rows: EmbeddingMatrix) -> Result<Self> {
        if rows.rows() > usize::from(TokenId::MAX) + 1 {
            return Err(Error::BadParam(format!(
                "vocabulary of {} entries exceeds 16-bit token ids",
                rows.rows()
            )));
        }
        Ok(Self { rows })
    }

    pub fn vocab_size(&self) -> usize {
        self.rows.rows()
    }

    pub fn dim(&self) -> usize {
        self.rows.dim()
    }

    pub fn matrix(&self) -> &EmbeddingMatrix {
        &self.rows
    }

    pub fn row(&self, id: TokenId) -> Result<&[f32]> {
        if usize::from(id) >= self.vocab_size() {
            return Err(Error::UnknownToken {
                id,
                vocab: self.vocab_size(),
            });
        }
        Ok(self.rows.row(usize::from(id)))
    }
}

/// Intermediate values of one encoder pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderTrace {
    pub h: Vec<f64>,
    /// M×K softplus activations.
    pub a: Vec<f64>,
    /// M×K code distributions.
    pub p: Vec<f64>,
    pub code: Code,
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    (-x.abs()).exp().ln_1p() + x.max(0.0)
}

/// `ln(softplus(x))`, accurate where softplus underflows.
pub(crate) fn log_softplus(x: f64) -> f64 {
    if x < -30.0 {
        x
    } else {
        softplus(x).ln()
    }
}

/// d/dx ln(softplus(x)).
pub(crate) fn d_log_softplus(x: f64) -> f64 {
    if x < -30.0 {
        1.0
    } else {
        let sig = 1.0 / (1.0 + (-x).exp());
        sig / softplus(x)
    }
}

/// Sinusoidal feature for token position `pos`.
pub fn position_feature(pos: usize, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| {
            let pair = (i - i % 2) as f64;
            let angle = pos as f64 / 10000f64.powf(pair / dim as f64);
            if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

pub(crate) fn widen(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| f64::from(v)).collect()
}

fn narrow(x: Vec<f64>) -> Vec<f32> {
    x.into_iter().map(|v| v as f32).collect()
}

pub(crate) fn matvec(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    w.chunks_exact(x.len())
        .zip(b)
        .map(|(row, bias)| bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

/// Everything the backward pass needs from one encoder pass.
#[derive(Debug, Clone)]
pub(crate) struct EncoderCache {
    pub input: Vec<f64>,
    pub h: Vec<f64>,
    /// pre-softplus logits, M×K
    pub pre: Vec<f64>,
    pub p: Vec<f64>,
}

impl CQParams {
    pub(crate) fn encoder_input(&self, e_t: &[f64], e_bar: &[f64], position: usize) -> Vec<f64> {
        let mut input = Vec::with_capacity(self.shapes().input);
        input.extend_from_slice(e_t);
        input.extend_from_slice(e_bar);
        if self.use_position {
            input.extend(position_feature(position, self.spec.dim()));
        }
        input
    }

    pub(crate) fn encode_f64(&self, input: Vec<f64>, noise: Option<&[f64]>, tau: f64) -> Result<EncoderCache> {
        let s = self.shapes();
        let h: Vec<f64> = matvec(&self.w0, &self.b0, &input).into_iter().map(f64::tanh).collect();
        let pre = matvec(&self.w1, &self.b1, &h);
        let mut p = vec![0.0; pre.len()];
        for m in 0..s.books {
            let range = m * s.codewords..(m + 1) * s.codewords;
            let logits: Vec<f64> = range
                .clone()
                .map(|i| (log_softplus(pre[i]) + noise.map_or(0.0, |e| e[i])) / tau)
                .collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for (dst, e) in p[range].iter_mut().zip(exps) {
                *dst = e / sum;
            }
        }
        if h.iter().chain(&pre).chain(&p).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder activations"));
        }
        Ok(EncoderCache { input, h, pre, p })
    }

    pub(crate) fn compose_f64(&self, delta: &[f64], e_bar: &[f64]) -> Result<Vec<f64>> {
        let mut input = Vec::with_capacity(2 * delta.len());
        input.extend_from_slice(delta);
        input.extend_from_slice(e_bar);
        let out: Vec<f64> = matvec(&self.w2, &self.b2, &input).into_iter().map(f64::tanh).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("composition output"));
        }
        Ok(out)
    }
}

/// Argmax of each K-wide row; ties go to the lowest index.
pub(crate) fn argmax_rows(p: &[f64], k: usize) -> Code {
    Code::new(
        p.chunks_exact(k)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                    .0 as u32
            })
            .collect(),
    )
}

/// Encoder pass for one token. `stream` selects the Gumbel noise substream.
pub fn encoder_forward(
    params: &CQParams,
    e_t: &[f32],
    e_bar: &[f32],
    position: usize,
    g: &GumbelConfig,
    stream: u64,
) -> Result<EncoderTrace> {
    g.validate()?;
    let d = params.spec().dim();
    check_dim(d, e_t.len())?;
    check_dim(d, e_bar.len())?;
    let s = params.shapes();
    let noise = g.noise_for(stream, s.books * s.codewords);
    let input = params.encoder_input(&widen(e_t), &widen(e_bar), position);
    let cache = params.encode_f64(input, noise.as_deref(), g.tau)?;
    let a: Vec<f64> = cache.pre.iter().map(|&x| softplus(x)).collect();
    let code = argmax_rows(&cache.p, s.codewords);
    Ok(EncoderTrace {
        h: cache.h,
        a,
        p: cache.p,
        code,
    })
}

/// Codebook reconstruction of the document-dependent component.
pub fn decode_delta(params: &CQParams, code: &Code) -> Result<Vec<f32>> {
    params.codebooks.decode_f64(code).map(narrow)
}

/// Training-time decode: each codeword is the `p^m`-weighted mixture of its book.
pub fn soft_decode_delta(params: &CQParams, p: &[f64]) -> Result<Vec<f32>> {
    params.codebooks.soft_decode_f64(p).map(narrow)
}

/// `tanh(w2 · (delta_hat ∘ e_bar) + b2)`.
pub fn compose(params: &CQParams, delta_hat: &[f32], e_bar: &[f32]) -> Result<Vec<f32>> {
    let d = params.spec().dim();
    check_dim(d, delta_hat.len())?;
    check_dim(d, e_bar.len())?;
    params.compose_f64(&widen(delta_hat), &widen(e_bar)).map(narrow)
}

fn require_offline(g: &GumbelConfig) -> Result<()> {
    if !g.hard || g.noise {
        return Err(Error::BadParam(
            "offline quantization needs hard codes with noise off".into(),
        ));
    }
    g.validate()
}

/// Offline compression of one document: one code per token, in token order.
pub fn quantize_document(
    params: &CQParams,
    doc: &DocumentTokens,
    table: &DocIndepTable,
    g: &GumbelConfig,
) -> Result<DocumentCodes> {
    require_offline(g)?;
    check_dim(params.spec().dim(), doc.embeddings.dim())?;
    check_dim(params.spec().dim(), table.dim())?;
    let codes = par::try_map_range(doc.len(), |i| {
        let e_bar = table.row(doc.token_ids[i])?;
        encoder_forward(params, doc.embeddings.row(i), e_bar, i, g, i as u64).map(|t| t.code)
    })?;
    DocumentCodes::new(doc.doc_id, doc.token_ids.clone(), codes)
}

/// Quantize many documents, fanning out per document.
pub fn quantize_corpus(
    params: &CQParams,
    docs: &[DocumentTokens],
    table: &DocIndepTable,
) -> Result<Vec<DocumentCodes>> {
    let g = GumbelConfig::inference();
    par::try_map_slice(docs, |doc| {
        let codes = doc
            .embeddings
            .iter_rows()
            .enumerate()
            .map(|(i, row)| {
                let e_bar = table.row(doc.token_ids[i])?;
                encoder_forward(params, row, e_bar, i, &g, i as u64).map(|t| t.code)
            })
            .collect::<Result<Vec<_>>>()?;
        DocumentCodes::new(doc.doc_id, doc.token_ids.clone(), codes)
    })
}

/// Decompress and recompose every token of a stored document.
pub fn reconstruct_document(
    params: &CQParams,
    codes: &DocumentCodes,
    table: &DocIndepTable,
) -> Result<EmbeddingMatrix> {
    let d = params.spec().dim();
    check_dim(d, table.dim())?;
    let mut data = Vec::with_capacity(codes.len() * d);
    for (code, &id) in codes.codes.iter().zip(&codes.token_ids) {
        let e_bar = widen(table.row(id)?);
        let delta = params.codebooks.decode_f64(code)?;
        data.extend(narrow(params.compose_f64(&delta, &e_bar)?));
    }
    EmbeddingMatrix::new(codes.len(), d, data)
}

/// A trained quantizer paired with its vocabulary table, usable as a decoder.
#[derive(Debug, Clone, Copy)]
pub struct CqDecoder<'a> {
    pub params: &'a CQParams,
    pub table: &'a DocIndepTable,
}

impl DocumentDecoder for CqDecoder<'_> {
    fn spec(&self) -> &QuantizerSpec {
        self.params.spec()
    }

    fn reconstruct(&self, codes: &DocumentCodes) -> Result<EmbeddingMatrix> {
        reconstruct_document(self.params, codes, self.table)
    }
}
