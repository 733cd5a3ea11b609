//! Shared domain types and dimension bookkeeping.

use std::fmt;

use crate::error::{Error, Result};

/// How the M codewords of a code are combined into one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Each codebook covers a D/M-wide slice; codewords are concatenated.
    Product,
    /// Each codebook covers all D dimensions; codewords are summed.
    Additive,
}

impl Mode {
    pub fn as_byte(self) -> u8 {
        match self {
            Mode::Product => 0,
            Mode::Additive => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Mode::Product),
            1 => Some(Mode::Additive),
            _ => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Product => "product",
            Mode::Additive => "additive",
        })
    }
}

/// Codebook geometry shared by every encoder and decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QuantizerSpec {
    mode: Mode,
    books: usize,
    codewords: usize,
    dim: usize,
    sub_dim: usize,
    bits_per_entry: u32,
}

/// Smallest `b` with `2^b >= k`.
pub fn bits_for(k: usize) -> u32 {
    if k <= 1 {
        0
    } else {
        usize::BITS - (k - 1).leading_zeros()
    }
}

impl QuantizerSpec {
    pub fn new(mode: Mode, books: usize, codewords: usize, dim: usize) -> Result<Self> {
        if books == 0 {
            return Err(Error::BadParam("M must be at least 1".into()));
        }
        if dim == 0 {
            return Err(Error::BadParam("D must be at least 1".into()));
        }
        if codewords < 2 {
            return Err(Error::BadParam(format!("K must be at least 2, got {codewords}")));
        }
        if codewords > u32::MAX as usize {
            return Err(Error::BadParam("K does not fit in 32 bits".into()));
        }
        let sub_dim = match mode {
            Mode::Product => {
                if !dim.is_multiple_of(books) {
                    return Err(Error::NonDivisible { dim, books });
                }
                dim / books
            }
            Mode::Additive => dim,
        };
        let spec = Self {
            mode,
            books,
            codewords,
            dim,
            sub_dim,
            bits_per_entry: bits_for(codewords),
        };
        if mode == Mode::Product {
            assert_eq!(spec.books * spec.sub_dim, spec.dim);
        }
        Ok(spec)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// M, the number of codebooks (and code entries).
    pub fn books(&self) -> usize {
        self.books
    }

    /// K, codewords per codebook.
    pub fn codewords(&self) -> usize {
        self.codewords
    }

    /// D, the embedding dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// h, the codeword dimension.
    pub fn sub_dim(&self) -> usize {
        self.sub_dim
    }

    pub fn bits_per_entry(&self) -> u32 {
        self.bits_per_entry
    }

    /// Dimension range of the embedding covered by codebook `m`.
    pub fn slice_range(&self, m: usize) -> std::ops::Range<usize> {
        match self.mode {
            Mode::Product => m * self.sub_dim..(m + 1) * self.sub_dim,
            Mode::Additive => 0..self.dim,
        }
    }

    pub fn validate_code(&self, code: &Code) -> Result<()> {
        if code.len() != self.books {
            return Err(Error::BadCode(format!(
                "code has {} entries, expected {}",
                code.len(),
                self.books
            )));
        }
        if let Some((m, &e)) = code
            .entries()
            .iter()
            .enumerate()
            .find(|(_, &e)| e as usize >= self.codewords)
        {
            return Err(Error::BadCode(format!(
                "entry {m} is {e}, must be below K = {}",
                self.codewords
            )));
        }
        Ok(())
    }
}

/// Index of a token in the vocabulary.
pub type TokenId = u16;

/// A discrete code: one codeword index per codebook, 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Code(Vec<u32>);

impl Code {
    pub fn new(entries: Vec<u32>) -> Self {
        Self(entries)
    }

    pub fn zeros(books: usize) -> Self {
        Self(vec![0; books])
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of entries that differ.
    pub fn hamming(&self, other: &Code) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }
}

impl From<Vec<u32>> for Code {
    fn from(v: Vec<u32>) -> Self {
        Self(v)
    }
}

/// Human-facing rendering is 1-based, e.g. `[4,4,3,1]`.
impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}", e + 1)?;
        }
        f.write_str("]")
    }
}

/// Row-major matrix of token embeddings, one row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{dim} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding matrix"));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f32>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        // chunks_exact on an empty slice with dim 0 would panic
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn push_row(&mut self, row: &[f32]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding row"));
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    /// Rows `idx` gathered into a new matrix.
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            dim: self.dim,
            data,
        }
    }

    /// Mean over rows of the squared L2 distance to `other`.
    pub fn mean_squared_error(&self, other: &Self) -> Result<f64> {
        if self.dim != other.dim || self.rows != other.rows {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.dim, other.rows, other.dim
            )));
        }
        if self.rows == 0 {
            return Ok(0.0);
        }
        let sse: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| {
                let d = f64::from(a) - f64::from(b);
                d * d
            })
            .sum();
        Ok(sse / self.rows as f64)
    }
}

/// A document: its token ids and the contextual embedding of each token.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentTokens {
    pub doc_id: u64,
    pub token_ids: Vec<TokenId>,
    pub embeddings: EmbeddingMatrix,
}

impl DocumentTokens {
    pub fn new(doc_id: u64, token_ids: Vec<TokenId>, embeddings: EmbeddingMatrix) -> Result<Self> {
        if token_ids.len() != embeddings.rows() {
            return Err(Error::ShapeMismatch(format!(
                "document {doc_id}: {} token ids but {} embedding rows",
                token_ids.len(),
                embeddings.rows()
            )));
        }
        Ok(Self {
            doc_id,
            token_ids,
            embeddings,
        })
    }

    /// n, the token count.
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// The compressed form of a document: token ids plus one code per token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentCodes {
    pub doc_id: u64,
    pub token_ids: Vec<TokenId>,
    pub codes: Vec<Code>,
}

impl DocumentCodes {
    pub fn new(doc_id: u64, token_ids: Vec<TokenId>, codes: Vec<Code>) -> Result<Self> {
        if token_ids.len() != codes.len() {
            return Err(Error::ShapeMismatch(format!(
                "document {doc_id}: {} token ids but {} codes",
                token_ids.len(),
                codes.len()
            )));
        }
        Ok(Self {
            doc_id,
            token_ids,
            codes,
        })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn validate(&self, spec: &QuantizerSpec) -> Result<()> {
        self.codes.iter().try_for_each(|c| spec.validate_code(c))
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        Err(Error::DimMismatch { expected, got })
    } else {
        Ok(())
    }
}
