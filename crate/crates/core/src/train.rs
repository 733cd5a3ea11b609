//! Losses, analytic gradients, Adam and the two-phase training loop.
//!
//! Phase one (warm-up) minimizes reconstruction MSE through the soft
//! Gumbel-softmax path and updates every parameter. Phase two freezes the
//! encoder, so every token's code is fixed, and fine-tunes the codebooks
//! and composition layer against teacher scores with a ranking loss.

use std::fmt;
use std::str::FromStr;

use log::{debug, info};

use crate::cq::{argmax_rows, d_log_softplus, widen, CQParams, DocIndepTable, GumbelConfig};
use crate::error::{Error, Result};
use crate::par;
use crate::rerank::maxsim_score;
use crate::rng::{mix64, SplitMix64};
use crate::types::{check_dim, Code, DocumentTokens, EmbeddingMatrix};

pub const W0: usize = 0;
pub const B0: usize = 1;
pub const W1: usize = 2;
pub const B1: usize = 3;
pub const W2: usize = 4;
pub const B2: usize = 5;
pub const CODEBOOKS: usize = 6;
/// Tensor indices that belong to the encoder.
pub const ENCODER_TENSORS: [usize; 4] = [W0, B0, W1, B1];

const TENSOR_NAMES: [&str; 7] = ["w0", "b0", "w1", "b1", "w2", "b2", "codebooks"];

/// Samples handled sequentially by one parallel task. Fixed so the
/// summation order does not depend on the thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Mse,
    PairwiseCe,
    MarginMse,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Self::Mse),
            "pairwise-ce" => Ok(Self::PairwiseCe),
            "margin-mse" => Ok(Self::MarginMse),
            other => Err(Error::BadParam(format!("unknown loss {other:?}"))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mse => "mse",
            Self::PairwiseCe => "pairwise-ce",
            Self::MarginMse => "margin-mse",
        })
    }
}

/// One training token: its contextual and document-independent embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSample {
    pub e_t: Vec<f64>,
    pub e_bar: Vec<f64>,
    pub position: usize,
}

impl TokenSample {
    pub fn new(e_t: &[f32], e_bar: &[f32], position: usize) -> Self {
        Self {
            e_t: widen(e_t),
            e_bar: widen(e_bar),
            position,
        }
    }
}

/// Gradient tensors laid out like [`CQParams::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: [Vec<f64>; 7],
}

impl Gradients {
    pub fn zeros_like(params: &CQParams) -> Self {
        Self {
            tensors: params.tensors().map(|t| vec![0.0; t.len()]),
        }
    }

    fn add(&mut self, other: &Self) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// Zero the encoder tensors (frozen-encoder fine-tuning).
    pub fn freeze_encoder(&mut self) {
        for i in ENCODER_TENSORS {
            self.tensors[i].iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn name(index: usize) -> &'static str {
        TENSOR_NAMES[index]
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

// ---------------------------------------------------------------------------
// losses

/// `-log(e^{f+} / (e^{f+} + e^{f-}))`, the pairwise softmax cross-entropy with d+ as target.
pub fn loss_pairwise_ce(f_pos_hat: f64, f_neg_hat: f64) -> Result<f64> {
    if !(f_pos_hat.is_finite() && f_neg_hat.is_finite()) {
        return Err(Error::NonFinite("ranking scores"));
    }
    Ok(crate::cq::softplus(f_neg_hat - f_pos_hat))
}

/// `((f+ - f-) - (f̂+ - f̂-))^2`.
pub fn loss_margin_mse(f_pos: f64, f_neg: f64, f_pos_hat: f64, f_neg_hat: f64) -> Result<f64> {
    if [f_pos, f_neg, f_pos_hat, f_neg_hat].iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ranking scores"));
    }
    let r = (f_pos - f_neg) - (f_pos_hat - f_neg_hat);
    Ok(r * r)
}

/// Loss and its derivatives with respect to the student scores (f̂+, f̂-).
pub fn ranking_loss_and_grad(
    kind: LossKind,
    teacher: (f64, f64),
    student: (f64, f64),
) -> Result<(f64, f64, f64)> {
    match kind {
        LossKind::PairwiseCe => {
            let loss = loss_pairwise_ce(student.0, student.1)?;
            // d/df+ softplus(f- - f+) = -sigmoid(f- - f+)
            let s = 1.0 / (1.0 + (student.0 - student.1).exp());
            Ok((loss, -s, s))
        }
        LossKind::MarginMse => {
            let loss = loss_margin_mse(teacher.0, teacher.1, student.0, student.1)?;
            let r = (teacher.0 - teacher.1) - (student.0 - student.1);
            Ok((loss, -2.0 * r, 2.0 * r))
        }
        LossKind::Mse => Err(Error::BadParam("MSE is not a ranking loss".into())),
    }
}

// ---------------------------------------------------------------------------
// reconstruction loss

struct SampleForward {
    enc: crate::cq::EncoderCache,
    delta: Vec<f64>,
    out: Vec<f64>,
}

fn sample_forward(model: &CQParams, s: &TokenSample, g: &GumbelConfig, stream: u64) -> Result<SampleForward> {
    let d = model.spec().dim();
    check_dim(d, s.e_t.len())?;
    check_dim(d, s.e_bar.len())?;
    let shapes = model.shapes();
    let noise = g.noise_for(stream, shapes.books * shapes.codewords);
    let input = model.encoder_input(&s.e_t, &s.e_bar, s.position);
    let enc = model.encode_f64(input, noise.as_deref(), g.tau)?;
    let delta = if g.hard {
        model.codebooks.decode_f64(&argmax_rows(&enc.p, shapes.codewords))?
    } else {
        model.codebooks.soft_decode_f64(&enc.p)?
    };
    let out = model.compose_f64(&delta, &s.e_bar)?;
    Ok(SampleForward { enc, delta, out })
}

fn sq_err(out: &[f64], target: &[f64]) -> f64 {
    out.iter()
        .zip(target)
        .map(|(o, t)| {
            let d = o - t;
            d * d
        })
        .sum()
}

/// Summed squared reconstruction error under `g`; sample `i` uses noise substream `i`.
pub fn loss_mse_with(model: &CQParams, batch: &[TokenSample], g: &GumbelConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    g.validate()?;
    let chunks: Vec<&[TokenSample]> = batch.chunks(CHUNK).collect();
    let partial = par::try_map_range(chunks.len(), |c| {
        let mut sum = 0.0;
        for (i, s) in chunks[c].iter().enumerate() {
            let f = sample_forward(model, s, g, (c * CHUNK + i) as u64)?;
            sum += sq_err(&f.out, &s.e_t);
        }
        Ok::<_, Error>(sum)
    })?;
    Ok(partial.into_iter().sum())
}

/// `Σ ‖E(t) − Ê(t)‖²` over the batch through the noise-free soft path.
pub fn loss_mse(model: &CQParams, batch: &[TokenSample]) -> Result<f64> {
    let g = GumbelConfig {
        hard: false,
        noise: false,
        ..GumbelConfig::inference()
    };
    loss_mse_with(model, batch, &g)
}

/// Backprop the composition layer from `dout` and return d/dΔ̂.
fn compose_backward(model: &CQParams, delta: &[f64], e_bar: &[f64], out: &[f64], dout: &[f64], grads: &mut Gradients) -> Vec<f64> {
    let d = delta.len();
    let width = 2 * d;
    let mut ddelta = vec![0.0; d];
    for r in 0..d {
        let dy = dout[r] * (1.0 - out[r] * out[r]);
        if dy == 0.0 {
            continue;
        }
        grads.tensors[B2][r] += dy;
        let row = &model.w2[r * width..(r + 1) * width];
        let grow = &mut grads.tensors[W2][r * width..(r + 1) * width];
        for c in 0..d {
            grow[c] += dy * delta[c];
            grow[d + c] += dy * e_bar[c];
            ddelta[c] += dy * row[c];
        }
    }
    ddelta
}

fn sample_backward(model: &CQParams, s: &TokenSample, g: &GumbelConfig, stream: u64, grads: &mut Gradients) -> Result<f64> {
    let f = sample_forward(model, s, g, stream)?;
    let spec = *model.spec();
    let shapes = model.shapes();
    let (k, hdim, hidden) = (shapes.codewords, spec.sub_dim(), shapes.hidden);

    let dout: Vec<f64> = f.out.iter().zip(&s.e_t).map(|(o, t)| 2.0 * (o - t)).collect();
    let ddelta = compose_backward(model, &f.delta, &s.e_bar, &f.out, &dout, grads);

    let mut dh = vec![0.0; hidden];
    for m in 0..shapes.books {
        let dchat = &ddelta[spec.slice_range(m)];
        let p = &f.enc.p[m * k..(m + 1) * k];
        let mut dp = vec![0.0; k];
        for j in 0..k {
            let cw = model.codebooks.codeword(m, j);
            dp[j] = cw.iter().zip(dchat).map(|(a, b)| a * b).sum();
            let off = (m * k + j) * hdim;
            for (gc, dc) in grads.tensors[CODEBOOKS][off..off + hdim].iter_mut().zip(dchat) {
                *gc += p[j] * dc;
            }
        }
        let mean: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
        for j in 0..k {
            let dz = p[j] * (dp[j] - mean);
            let idx = m * k + j;
            let dpre = dz / g.tau * d_log_softplus(f.enc.pre[idx]);
            if dpre == 0.0 {
                continue;
            }
            grads.tensors[B1][idx] += dpre;
            let row = &model.w1[idx * hidden..(idx + 1) * hidden];
            let grow = &mut grads.tensors[W1][idx * hidden..(idx + 1) * hidden];
            for u in 0..hidden {
                grow[u] += dpre * f.enc.h[u];
                dh[u] += dpre * row[u];
            }
        }
    }

    let width = f.enc.input.len();
    for (u, (&d, &h)) in dh.iter().zip(&f.enc.h).enumerate().take(hidden) {
        let dz = d * (1.0 - h * h);
        if dz == 0.0 {
            continue;
        }
        grads.tensors[B0][u] += dz;
        for (gw, x) in grads.tensors[W0][u * width..(u + 1) * width].iter_mut().zip(&f.enc.input) {
            *gw += dz * x;
        }
    }
    Ok(sq_err(&f.out, &s.e_t))
}

/// Loss and exact gradients of the summed reconstruction error through the soft path.
pub fn backward_mse(model: &CQParams, batch: &[TokenSample], g: &GumbelConfig) -> Result<(f64, Gradients)> {
    if g.hard {
        return Err(Error::HardModeGradient);
    }
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    g.validate()?;
    let chunks: Vec<&[TokenSample]> = batch.chunks(CHUNK).collect();
    let partial = par::try_map_range(chunks.len(), |c| {
        let mut grads = Gradients::zeros_like(model);
        let mut loss = 0.0;
        for (i, s) in chunks[c].iter().enumerate() {
            loss += sample_backward(model, s, g, (c * CHUNK + i) as u64, &mut grads)?;
        }
        Ok::<_, Error>((loss, grads))
    })?;
    let mut total = Gradients::zeros_like(model);
    let mut loss = 0.0;
    for (l, gr) in &partial {
        loss += l;
        total.add(gr);
    }
    Ok((loss, total))
}

// ---------------------------------------------------------------------------
// ranking loss with a frozen encoder

/// A query with one positive and one negative document.
#[derive(Debug, Clone, PartialEq)]
pub struct RankTriple {
    pub query: EmbeddingMatrix,
    pub pos_doc: DocumentTokens,
    pub neg_doc: DocumentTokens,
}

/// A document as the frozen encoder sees it: fixed codes plus the
/// document-independent rows of its tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenDoc {
    pub codes: Vec<Code>,
    pub e_bar: Vec<Vec<f64>>,
}

type Rows = Vec<Vec<f64>>;

impl FrozenDoc {
    pub fn encode(model: &CQParams, doc: &DocumentTokens, table: &DocIndepTable) -> Result<Self> {
        let g = GumbelConfig::inference();
        let mut codes = Vec::with_capacity(doc.len());
        let mut e_bar = Vec::with_capacity(doc.len());
        for (i, row) in doc.embeddings.iter_rows().enumerate() {
            let bar = table.row(doc.token_ids[i])?;
            codes.push(crate::cq::encoder_forward(model, row, bar, i, &g, i as u64)?.code);
            e_bar.push(widen(bar));
        }
        Ok(Self { codes, e_bar })
    }

    /// Δ̂ per token and the reconstructed rows (in f64).
    fn reconstruct(&self, model: &CQParams) -> Result<(Rows, Rows)> {
        let mut deltas = Vec::with_capacity(self.codes.len());
        let mut outs = Vec::with_capacity(self.codes.len());
        for (code, bar) in self.codes.iter().zip(&self.e_bar) {
            let delta = model.codebooks.decode_f64(code)?;
            outs.push(model.compose_f64(&delta, bar)?);
            deltas.push(delta);
        }
        Ok((deltas, outs))
    }
}

/// A training triple with cached codes and cached teacher scores.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenTriple {
    pub query: Vec<Vec<f64>>,
    pub pos: FrozenDoc,
    pub neg: FrozenDoc,
    pub teacher_pos: f64,
    pub teacher_neg: f64,
}

impl FrozenTriple {
    pub fn new(
        model: &CQParams,
        triple: &RankTriple,
        table: &DocIndepTable,
        teacher: &(dyn Fn(&EmbeddingMatrix, &DocumentTokens) -> Result<f64> + Sync),
    ) -> Result<Self> {
        check_dim(model.spec().dim(), triple.query.dim())?;
        Ok(Self {
            query: triple.query.iter_rows().map(widen).collect(),
            pos: FrozenDoc::encode(model, &triple.pos_doc, table)?,
            neg: FrozenDoc::encode(model, &triple.neg_doc, table)?,
            teacher_pos: teacher(&triple.query, &triple.pos_doc)?,
            teacher_neg: teacher(&triple.query, &triple.neg_doc)?,
        })
    }
}

fn dot64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// MaxSim over f64 rows plus, for each query row, the winning document row.
fn maxsim64(query: &[Vec<f64>], doc: &[Vec<f64>]) -> Result<(f64, Vec<usize>)> {
    if doc.is_empty() {
        return Err(Error::EmptyDoc);
    }
    let mut total = 0.0;
    let mut winners = Vec::with_capacity(query.len());
    for q in query {
        let (j, s) = doc
            .iter()
            .enumerate()
            .map(|(j, d)| (j, dot64(q, d)))
            .fold((0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b });
        total += s;
        winners.push(j);
    }
    Ok((total, winners))
}

/// Student MaxSim score of a frozen document.
pub fn student_score(model: &CQParams, query: &[Vec<f64>], doc: &FrozenDoc) -> Result<f64> {
    let (_, outs) = doc.reconstruct(model)?;
    Ok(maxsim64(query, &outs)?.0)
}

fn doc_backward(model: &CQParams, query: &[Vec<f64>], doc: &FrozenDoc, dscore: f64, grads: &mut Gradients) -> Result<f64> {
    let spec = *model.spec();
    let (deltas, outs) = doc.reconstruct(model)?;
    let (score, winners) = maxsim64(query, &outs)?;
    let d = spec.dim();
    let mut douts = vec![vec![0.0; d]; outs.len()];
    for (q, &j) in query.iter().zip(&winners) {
        for (g, qv) in douts[j].iter_mut().zip(q) {
            *g += dscore * qv;
        }
    }
    let hdim = spec.sub_dim();
    for t in 0..outs.len() {
        if douts[t].iter().all(|&v| v == 0.0) {
            continue;
        }
        let ddelta = compose_backward(model, &deltas[t], &doc.e_bar[t], &outs[t], &douts[t], grads);
        for (m, &j) in doc.codes[t].entries().iter().enumerate() {
            let off = (m * spec.codewords() + j as usize) * hdim;
            for (gc, dd) in grads.tensors[CODEBOOKS][off..off + hdim].iter_mut().zip(&ddelta[spec.slice_range(m)]) {
                *gc += dd;
            }
        }
    }
    Ok(score)
}

fn triple_backward(model: &CQParams, t: &FrozenTriple, kind: LossKind, grads: &mut Gradients) -> Result<f64> {
    let sp = student_score(model, &t.query, &t.pos)?;
    let sn = student_score(model, &t.query, &t.neg)?;
    let (loss, dp, dn) = ranking_loss_and_grad(kind, (t.teacher_pos, t.teacher_neg), (sp, sn))?;
    doc_backward(model, &t.query, &t.pos, dp, grads)?;
    doc_backward(model, &t.query, &t.neg, dn, grads)?;
    Ok(loss)
}

/// Summed ranking loss over frozen triples.
pub fn ranking_loss(model: &CQParams, triples: &[FrozenTriple], kind: LossKind) -> Result<f64> {
    if triples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let per = par::try_map_slice(triples, |t| {
        let sp = student_score(model, &t.query, &t.pos)?;
        let sn = student_score(model, &t.query, &t.neg)?;
        ranking_loss_and_grad(kind, (t.teacher_pos, t.teacher_neg), (sp, sn)).map(|r| r.0)
    })?;
    Ok(per.into_iter().sum())
}

/// Loss and gradients of a ranking loss with the encoder frozen. Encoder
/// gradients are zero.
pub fn backward_ranking(model: &CQParams, triples: &[FrozenTriple], kind: LossKind) -> Result<(f64, Gradients)> {
    if triples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if kind == LossKind::Mse {
        return Err(Error::BadParam("MSE gradients need token samples".into()));
    }
    let chunks: Vec<&[FrozenTriple]> = triples.chunks(CHUNK).collect();
    let partial = par::try_map_range(chunks.len(), |c| {
        let mut grads = Gradients::zeros_like(model);
        let mut loss = 0.0;
        for t in chunks[c] {
            loss += triple_backward(model, t, kind, &mut grads)?;
        }
        Ok::<_, Error>((loss, grads))
    })?;
    let mut total = Gradients::zeros_like(model);
    let mut loss = 0.0;
    for (l, g) in &partial {
        loss += l;
        total.add(g);
    }
    Ok((loss, total))
}

/// A training batch for [`backward`].
#[derive(Debug, Clone, Copy)]
pub enum Batch<'a> {
    Tokens(&'a [TokenSample]),
    Triples(&'a [FrozenTriple]),
}

/// Gradients of `loss` on `batch`. Token batches go through the soft relaxation
/// and need `g.hard == false`; triple batches use the frozen encoder's codes.
pub fn backward(model: &CQParams, batch: Batch<'_>, loss: LossKind, g: &GumbelConfig) -> Result<(f64, Gradients)> {
    match (batch, loss) {
        (Batch::Tokens(samples), LossKind::Mse) => backward_mse(model, samples, g),
        (Batch::Triples(triples), LossKind::PairwiseCe | LossKind::MarginMse) => backward_ranking(model, triples, loss),
        (Batch::Tokens(_), _) => Err(Error::BadParam(format!("{loss} needs ranking triples"))),
        (Batch::Triples(_), LossKind::Mse) => Err(Error::BadParam("mse needs token samples".into())),
    }
}

// ---------------------------------------------------------------------------
// Adam

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(shapes: &[usize]) -> Self {
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_params(params: &CQParams) -> Self {
        Self::new(&params.tensors().map(|t| t.len()))
    }

    /// One bias-corrected Adam update over parallel lists of tensors.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameter and {} gradient tensors for {} moment tensors",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::ShapeMismatch(format!("tensor {i} length differs")));
            }
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                p[j] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

pub fn adam_step(state: &mut AdamState, params: &mut CQParams, grads: &Gradients, lr: f64) -> Result<()> {
    let grads: Vec<&[f64]> = grads.tensors.iter().map(Vec::as_slice).collect();
    state.step(&mut params.tensors_mut(), &grads, lr)
}

// ---------------------------------------------------------------------------
// training loop

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmupConfig {
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub pairs_per_batch: usize,
    pub steps: usize,
    pub loss: LossKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub warmup: WarmupConfig,
    pub finetune: FinetuneConfig,
    pub seed: u64,
    /// Number of training tokens drawn from the corpus.
    pub sample_size: usize,
    pub use_position: bool,
    pub tau: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            warmup: WarmupConfig {
                lr: 1e-4,
                batch: 128,
                steps: 200_000,
            },
            finetune: FinetuneConfig {
                lr: 3e-6,
                pairs_per_batch: 32,
                steps: 800,
                loss: LossKind::MarginMse,
            },
            seed: 0,
            sample_size: 500_000,
            use_position: false,
            tau: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.warmup.lr > 0.0 && self.finetune.lr > 0.0) {
            return Err(Error::BadParam("learning rates must be positive".into()));
        }
        if self.warmup.batch == 0 || self.finetune.pairs_per_batch == 0 {
            return Err(Error::BadParam("batch sizes must be positive".into()));
        }
        if self.sample_size == 0 {
            return Err(Error::BadParam("sample size must be positive".into()));
        }
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err(Error::BadParam("temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Per-step batch losses from [`train_cq_logged`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub warmup: Vec<f64>,
    pub finetune: Vec<f64>,
}

/// Teacher scoring callback: score of a raw document for a query.
pub type Teacher<'a> = dyn Fn(&EmbeddingMatrix, &DocumentTokens) -> Result<f64> + Sync + 'a;

/// MaxSim on the uncompressed embeddings.
pub fn maxsim_teacher(query: &EmbeddingMatrix, doc: &DocumentTokens) -> Result<f64> {
    maxsim_score(query, &doc.embeddings)
}

/// Draw up to `sample_size` training tokens uniformly from the corpus.
pub fn sample_tokens(corpus: &[DocumentTokens], table: &DocIndepTable, sample_size: usize, seed: u64) -> Result<Vec<TokenSample>> {
    let all: Vec<(usize, usize)> = corpus
        .iter()
        .enumerate()
        .flat_map(|(d, doc)| (0..doc.len()).map(move |t| (d, t)))
        .collect();
    if all.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut picks: Vec<usize> = if all.len() > sample_size {
        SplitMix64::new(seed).sample_indices(all.len(), sample_size)
    } else {
        (0..all.len()).collect()
    };
    picks.sort_unstable();
    picks
        .into_iter()
        .map(|i| {
            let (d, t) = all[i];
            let doc = &corpus[d];
            Ok(TokenSample::new(doc.embeddings.row(t), table.row(doc.token_ids[t])?, t))
        })
        .collect()
}

fn step_gumbel(seed: u64, phase: u64, step: usize, tau: f64) -> GumbelConfig {
    GumbelConfig {
        tau,
        ..GumbelConfig::training(mix64(seed ^ mix64(phase << 40 | step as u64)))
    }
}

/// Epoch-shuffled minibatches over `n` items.
struct Batcher {
    order: Vec<usize>,
    pos: usize,
    rng: SplitMix64,
}

impl Batcher {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        Self { order, pos: 0, rng }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.rng.shuffle(&mut self.order);
                self.pos = 0;
            }
            let take = (size - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }
}

/// Warm up on reconstruction MSE, then fine-tune the decoder with the configured loss.
pub fn train_cq(
    spec: crate::types::QuantizerSpec,
    corpus: &[DocumentTokens],
    table: &DocIndepTable,
    triples: &[RankTriple],
    teacher: &Teacher<'_>,
    cfg: &TrainConfig,
) -> Result<CQParams> {
    train_cq_logged(spec, corpus, table, triples, teacher, cfg).map(|r| r.0)
}

/// [`train_cq`] that also returns the per-step losses.
pub fn train_cq_logged(
    spec: crate::types::QuantizerSpec,
    corpus: &[DocumentTokens],
    table: &DocIndepTable,
    triples: &[RankTriple],
    teacher: &Teacher<'_>,
    cfg: &TrainConfig,
) -> Result<(CQParams, TrainLog)> {
    cfg.validate()?;
    check_dim(spec.dim(), table.dim())?;
    if cfg.finetune.steps > 0 && cfg.finetune.loss != LossKind::Mse && triples.is_empty() {
        return Err(Error::BadParam(format!("{} fine-tuning needs ranking triples", cfg.finetune.loss)));
    }
    let mut params = CQParams::init(spec, cfg.use_position, SplitMix64::substream(cfg.seed, 1).next_u64())?;
    let samples = sample_tokens(corpus, table, cfg.sample_size, SplitMix64::substream(cfg.seed, 2).next_u64())?;
    info!("training on {} tokens, {} parameters", samples.len(), params.param_count());
    let mut log = TrainLog::default();

    let mut adam = AdamState::for_params(&params);
    let mut batcher = Batcher::new(samples.len(), SplitMix64::substream(cfg.seed, 3).next_u64());
    for step in 0..cfg.warmup.steps {
        let batch: Vec<TokenSample> = batcher.next(cfg.warmup.batch).into_iter().map(|i| samples[i].clone()).collect();
        let g = step_gumbel(cfg.seed, 1, step, cfg.tau);
        let (loss, grads) = backward_mse(&params, &batch, &g)?;
        adam_step(&mut adam, &mut params, &grads, cfg.warmup.lr)?;
        log.warmup.push(loss / batch.len() as f64);
        if step % 500 == 0 {
            debug!("warm-up step {step}: mean loss {}", loss / batch.len() as f64);
        }
    }

    if cfg.finetune.steps == 0 {
        return Ok((params, log));
    }
    let mut adam = AdamState::for_params(&params);
    match cfg.finetune.loss {
        LossKind::Mse => {
            for step in 0..cfg.finetune.steps {
                let batch: Vec<TokenSample> =
                    batcher.next(cfg.warmup.batch).into_iter().map(|i| samples[i].clone()).collect();
                let g = step_gumbel(cfg.seed, 2, step, cfg.tau);
                let (loss, mut grads) = backward_mse(&params, &batch, &g)?;
                grads.freeze_encoder();
                adam_step(&mut adam, &mut params, &grads, cfg.finetune.lr)?;
                log.finetune.push(loss / batch.len() as f64);
            }
        }
        kind => {
            let frozen = par::try_map_slice(triples, |t| FrozenTriple::new(&params, t, table, teacher))?;
            let mut rng = SplitMix64::substream(cfg.seed, 4);
            for step in 0..cfg.finetune.steps {
                let batch: Vec<FrozenTriple> = (0..cfg.finetune.pairs_per_batch)
                    .map(|_| frozen[rng.index(frozen.len())].clone())
                    .collect();
                let (loss, grads) = backward_ranking(&params, &batch, kind)?;
                adam_step(&mut adam, &mut params, &grads, cfg.finetune.lr)?;
                log.finetune.push(loss / batch.len() as f64);
                if step % 100 == 0 {
                    debug!("fine-tune step {step}: mean {kind} {}", loss / batch.len() as f64);
                }
            }
        }
    }
    Ok((params, log))
}
