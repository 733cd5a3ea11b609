//! Little-endian binary files: embeddings (CQEM), code stores (CQCS),
//! codebooks (CQBK) and quantizer networks (CQNN).
//!
//! Every file starts with a 4-byte magic and a `u32` format version.
//! Integers are little-endian, floats IEEE-754 binary32 little-endian.
//!
//! ```text
//! spec header (11 bytes):  mode u8 (0 product, 1 additive) | M u16 | K u32 | D u32
//!
//! CQEM  magic | version | D u32 | docs u64
//!       per doc: doc_id u64 | n u32 | token_ids u16[n] | f32[n*D] row-major
//! CQCS  magic | version | spec header | docs u64
//!       per doc: doc_id u64 | n u32 | token_ids u16[n] | packed codes, ceil(n*M*bits/8) bytes
//! CQBK  magic | version | spec header | f32[M*K*h], book-major then codeword then dim
//! CQNN  magic | version | spec header | use_position u8
//!       | w0 f32[H*I] | b0 f32[H] | w1 f32[M*K*H] | b1 f32[M*K] | w2 f32[D*2D] | b2 f32[D]
//!       | codebooks f32[M*K*h]          (H = M*K/2, I = 2D or 3D with positions)
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::pack::{pack_codes, packed_len, unpack_codes};
use crate::baseline::CodebookSet;
use crate::cq::{CQParams, DocIndepTable, Shapes};
use crate::error::{Error, Result};
use crate::types::{DocumentCodes, DocumentTokens, EmbeddingMatrix, Mode, QuantizerSpec, TokenId};

pub const FORMAT_VERSION: u32 = 1;
pub const EMBEDDINGS_MAGIC: [u8; 4] = *b"CQEM";
pub const STORE_MAGIC: [u8; 4] = *b"CQCS";
pub const CODEBOOKS_MAGIC: [u8; 4] = *b"CQBK";
pub const NETWORK_MAGIC: [u8; 4] = *b"CQNN";

/// Bytes taken by magic + version.
pub const PREAMBLE_LEN: usize = 8;
/// Bytes taken by the spec header.
pub const SPEC_HEADER_LEN: usize = 11;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::CorruptFile(format!("truncated at byte {} (need {n} more)", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::CorruptFile("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect())
    }

    fn u16s(&mut self, n: usize) -> Result<Vec<u16>> {
        let bytes = self.take(n.checked_mul(2).ok_or_else(|| Error::CorruptFile("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes(c.try_into().expect("chunk of 2")))
            .collect())
    }

    fn preamble(&mut self, magic: [u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.array()?;
        if found != magic {
            return Err(Error::BadMagic { expected: magic, found });
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                expected: FORMAT_VERSION,
                found: version,
            });
        }
        Ok(())
    }

    fn spec(&mut self) -> Result<QuantizerSpec> {
        let mode = self.u8()?;
        let mode = Mode::from_byte(mode).ok_or_else(|| Error::CorruptFile(format!("unknown mode byte {mode}")))?;
        let m = self.u16()?;
        let k = self.u32()?;
        let d = self.u32()?;
        QuantizerSpec::new(mode, m.into(), k as usize, d as usize)
            .map_err(|e| Error::CorruptFile(format!("invalid quantizer header: {e}")))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::CorruptFile(format!(
                "{} trailing bytes after payload",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn put_preamble(out: &mut Vec<u8>, magic: [u8; 4]) {
    out.extend_from_slice(&magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
}

fn put_spec(out: &mut Vec<u8>, spec: &QuantizerSpec) -> Result<()> {
    let m = u16::try_from(spec.books()).map_err(|_| Error::BadParam("M does not fit in 16 bits".into()))?;
    let d = u32::try_from(spec.dim()).map_err(|_| Error::BadParam("D does not fit in 32 bits".into()))?;
    out.push(spec.mode().as_byte());
    out.extend_from_slice(&m.to_le_bytes());
    out.extend_from_slice(&(spec.codewords() as u32).to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    Ok(())
}

fn put_f32s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f32>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_tokens(out: &mut Vec<u8>, doc_id: u64, ids: &[TokenId]) -> Result<()> {
    let n = u32::try_from(ids.len()).map_err(|_| Error::BadParam("document longer than u32::MAX tokens".into()))?;
    out.extend_from_slice(&doc_id.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    for id in ids {
        out.extend_from_slice(&id.to_le_bytes());
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// CQEM

/// Contents of an embedding file.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub dim: usize,
    pub docs: Vec<DocumentTokens>,
}

impl EmbeddingFile {
    pub fn new(dim: usize, docs: Vec<DocumentTokens>) -> Result<Self> {
        for d in &docs {
            if d.embeddings.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: d.embeddings.dim(),
                });
            }
        }
        Ok(Self { dim, docs })
    }

    /// All token rows of all documents, in file order.
    pub fn flatten(&self) -> EmbeddingMatrix {
        let rows: usize = self.docs.iter().map(|d| d.len()).sum();
        let mut data = Vec::with_capacity(rows * self.dim);
        for d in &self.docs {
            data.extend_from_slice(d.embeddings.as_slice());
        }
        EmbeddingMatrix::new(rows, self.dim, data).expect("rows validated per document")
    }
}

pub fn embeddings_to_bytes(file: &EmbeddingFile) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    put_preamble(&mut out, EMBEDDINGS_MAGIC);
    let d = u32::try_from(file.dim).map_err(|_| Error::BadParam("D does not fit in 32 bits".into()))?;
    out.extend_from_slice(&d.to_le_bytes());
    out.extend_from_slice(&(file.docs.len() as u64).to_le_bytes());
    for doc in &file.docs {
        if doc.embeddings.dim() != file.dim {
            return Err(Error::DimMismatch {
                expected: file.dim,
                got: doc.embeddings.dim(),
            });
        }
        put_tokens(&mut out, doc.doc_id, &doc.token_ids)?;
        put_f32s(&mut out, doc.embeddings.as_slice().iter().copied());
    }
    Ok(out)
}

pub fn embeddings_from_bytes(bytes: &[u8]) -> Result<EmbeddingFile> {
    let mut r = Reader::new(bytes);
    r.preamble(EMBEDDINGS_MAGIC)?;
    let dim = r.u32()? as usize;
    let count = r.u64()?;
    let mut docs = Vec::new();
    for _ in 0..count {
        let doc_id = r.u64()?;
        let n = r.u32()? as usize;
        let ids = r.u16s(n)?;
        let values = r.f32s(n * dim)?;
        let emb = EmbeddingMatrix::new(n, dim, values).map_err(|e| Error::CorruptFile(e.to_string()))?;
        docs.push(DocumentTokens::new(doc_id, ids, emb)?);
    }
    r.finish()?;
    Ok(EmbeddingFile { dim, docs })
}

pub fn write_embeddings(path: impl AsRef<Path>, file: &EmbeddingFile) -> Result<()> {
    write_file(path.as_ref(), &embeddings_to_bytes(file)?)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingFile> {
    embeddings_from_bytes(&fs::read(path)?)
}

/// A vocabulary table is stored as a CQEM file holding one document (id 0)
/// whose token ids are `0..V` in order.
pub fn table_to_embeddings(table: &DocIndepTable) -> EmbeddingFile {
    let ids: Vec<TokenId> = (0..table.vocab_size()).map(|i| i as TokenId).collect();
    let doc = DocumentTokens::new(0, ids, table.matrix().clone()).expect("one id per row");
    EmbeddingFile {
        dim: table.dim(),
        docs: vec![doc],
    }
}

pub fn table_from_embeddings(file: EmbeddingFile) -> Result<DocIndepTable> {
    let [doc]: [DocumentTokens; 1] = file
        .docs
        .try_into()
        .map_err(|_| Error::CorruptFile("vocabulary table must hold exactly one document".into()))?;
    if doc.token_ids.iter().enumerate().any(|(i, &id)| usize::from(id) != i) {
        return Err(Error::CorruptFile("vocabulary table token ids must be 0..V in order".into()));
    }
    DocIndepTable::new(doc.embeddings)
}

pub fn write_table(path: impl AsRef<Path>, table: &DocIndepTable) -> Result<()> {
    write_embeddings(path, &table_to_embeddings(table))
}

pub fn read_table(path: impl AsRef<Path>) -> Result<DocIndepTable> {
    table_from_embeddings(read_embeddings(path)?)
}

// ---------------------------------------------------------------------------
// CQCS

/// An immutable, randomly addressable collection of compressed documents.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeStore {
    spec: QuantizerSpec,
    docs: Vec<DocumentCodes>,
    index: HashMap<u64, usize>,
}

impl CodeStore {
    pub fn new(spec: QuantizerSpec, docs: Vec<DocumentCodes>) -> Result<Self> {
        let mut index = HashMap::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            d.validate(&spec)?;
            if index.insert(d.doc_id, i).is_some() {
                return Err(Error::BadParam(format!("duplicate document id {}", d.doc_id)));
            }
        }
        Ok(Self { spec, docs, index })
    }

    pub fn spec(&self) -> &QuantizerSpec {
        &self.spec
    }

    pub fn get(&self, doc_id: u64) -> Option<&DocumentCodes> {
        self.index.get(&doc_id).map(|&i| &self.docs[i])
    }

    /// Documents in file order.
    pub fn docs(&self) -> &[DocumentCodes] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

pub fn store_to_bytes(spec: &QuantizerSpec, docs: &[DocumentCodes]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    put_preamble(&mut out, STORE_MAGIC);
    put_spec(&mut out, spec)?;
    out.extend_from_slice(&(docs.len() as u64).to_le_bytes());
    for d in docs {
        if d.token_ids.len() != d.codes.len() {
            return Err(Error::ShapeMismatch(format!("document {}: ids and codes differ in length", d.doc_id)));
        }
        put_tokens(&mut out, d.doc_id, &d.token_ids)?;
        out.extend(pack_codes(&d.codes, spec)?);
    }
    Ok(out)
}

pub fn store_from_bytes(bytes: &[u8]) -> Result<CodeStore> {
    let mut r = Reader::new(bytes);
    r.preamble(STORE_MAGIC)?;
    let spec = r.spec()?;
    let count = r.u64()?;
    let mut docs = Vec::new();
    for _ in 0..count {
        let doc_id = r.u64()?;
        let n = r.u32()? as usize;
        let ids = r.u16s(n)?;
        let packed = r.take(packed_len(n, &spec))?;
        let codes = unpack_codes(packed, n, &spec).map_err(|e| Error::CorruptFile(e.to_string()))?;
        docs.push(DocumentCodes::new(doc_id, ids, codes)?);
    }
    r.finish()?;
    CodeStore::new(spec, docs).map_err(|e| Error::CorruptFile(e.to_string()))
}

pub fn write_store(path: impl AsRef<Path>, spec: &QuantizerSpec, docs: &[DocumentCodes]) -> Result<()> {
    write_file(path.as_ref(), &store_to_bytes(spec, docs)?)
}

pub fn read_store(path: impl AsRef<Path>) -> Result<CodeStore> {
    store_from_bytes(&fs::read(path)?)
}

// ---------------------------------------------------------------------------
// CQBK / CQNN

pub fn codebooks_to_bytes(cb: &CodebookSet) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    put_preamble(&mut out, CODEBOOKS_MAGIC);
    put_spec(&mut out, cb.spec())?;
    put_f32s(&mut out, cb.as_slice().iter().map(|&v| v as f32));
    Ok(out)
}

fn read_books(r: &mut Reader<'_>, spec: QuantizerSpec) -> Result<CodebookSet> {
    let len = spec.books() * spec.codewords() * spec.sub_dim();
    let values = r.f32s(len)?;
    CodebookSet::from_data(spec, values.into_iter().map(f64::from).collect())
        .map_err(|e| Error::CorruptFile(e.to_string()))
}

pub fn codebooks_from_bytes(bytes: &[u8]) -> Result<CodebookSet> {
    let mut r = Reader::new(bytes);
    r.preamble(CODEBOOKS_MAGIC)?;
    let spec = r.spec()?;
    let cb = read_books(&mut r, spec)?;
    r.finish()?;
    Ok(cb)
}

pub fn network_to_bytes(params: &CQParams) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    put_preamble(&mut out, NETWORK_MAGIC);
    put_spec(&mut out, params.spec())?;
    out.push(u8::from(params.use_position()));
    for t in params.tensors() {
        put_f32s(&mut out, t.iter().map(|&v| v as f32));
    }
    Ok(out)
}

pub fn network_from_bytes(bytes: &[u8]) -> Result<CQParams> {
    let mut r = Reader::new(bytes);
    r.preamble(NETWORK_MAGIC)?;
    let spec = r.spec()?;
    let use_position = match r.u8()? {
        0 => false,
        1 => true,
        b => return Err(Error::CorruptFile(format!("bad position flag {b}"))),
    };
    let shapes = Shapes::new(&spec, use_position).map_err(|e| Error::CorruptFile(e.to_string()))?;
    let mut t = Vec::with_capacity(6);
    for len in shapes.lens() {
        t.push(r.f32s(len)?.into_iter().map(f64::from).collect::<Vec<f64>>());
    }
    let books = read_books(&mut r, spec)?;
    r.finish()?;
    let mut t = t.into_iter();
    let mut next = || t.next().expect("six tensors");
    CQParams::from_parts(spec, use_position, next(), next(), next(), next(), next(), next(), books)
        .map_err(|e| Error::CorruptFile(e.to_string()))
}

pub fn write_codebooks(path: impl AsRef<Path>, cb: &CodebookSet) -> Result<()> {
    write_file(path.as_ref(), &codebooks_to_bytes(cb)?)
}

pub fn read_codebooks(path: impl AsRef<Path>) -> Result<CodebookSet> {
    codebooks_from_bytes(&fs::read(path)?)
}

pub fn write_model(path: impl AsRef<Path>, params: &CQParams) -> Result<()> {
    write_file(path.as_ref(), &network_to_bytes(params)?)
}

pub fn read_model(path: impl AsRef<Path>) -> Result<CQParams> {
    network_from_bytes(&fs::read(path)?)
}

/// Either kind of trained quantizer file.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelFile {
    Codebooks(CodebookSet),
    Network(CQParams),
}

/// Read a CQBK or CQNN file, dispatching on its magic.
pub fn read_any_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    let bytes = fs::read(path)?;
    match bytes.get(..4) {
        Some(m) if m == CODEBOOKS_MAGIC => codebooks_from_bytes(&bytes).map(ModelFile::Codebooks),
        Some(m) if m == NETWORK_MAGIC => network_from_bytes(&bytes).map(ModelFile::Network),
        Some(m) => Err(Error::BadMagic {
            expected: NETWORK_MAGIC,
            found: m.try_into().expect("4 bytes"),
        }),
        None => Err(Error::CorruptFile("file shorter than its magic".into())),
    }
}
