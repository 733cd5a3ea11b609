//! Contextual quantization of late-interaction token embeddings.
//!
//! A token embedding is split into a document-independent part, stored once
//! per vocabulary entry, and a document-dependent part that is compressed to
//! a short code. At ranking time the code is decoded, recombined with the
//! stored part and scored with MaxSim.
//!
//! Module map:
//!
//! * [`types`]: quantizer configuration, codes and embedding matrices.
//! * [`baseline`]: k-means, product and residual quantizers.
//! * [`cq`]: the contextual encoder/decoder network.
//! * [`train`]: manual backpropagation, Adam and the two-phase training loop.
//! * [`gradcheck`]: finite-difference gradient checks.
//! * [`rerank`]: MaxSim scoring and reranking from compressed codes.
//! * [`codestore`]: bit packing, binary file formats and the space model.
//! * [`eval`]: ranking metrics and TREC files.
//! * [`synth`]: seeded synthetic corpora and brute-force oracles.
//!
//! Data-parallel work runs on rayon when the `parallel` feature is enabled
//! (the default) and sequentially otherwise. Results are identical either way.

pub mod baseline;
pub mod codestore;
pub mod cq;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod par;
pub mod rerank;
pub mod rng;
pub mod synth;
pub mod train;
pub mod types;

pub use baseline::{
    decode_baseline, encode_baseline, kmeans, train_pq, train_rq, CodebookSet, KMeansConfig,
};
pub use codestore::{CodeStore, SpaceModel, SpaceReport};
pub use cq::{quantize_corpus, quantize_document, CQParams, CqDecoder, DocIndepTable, GumbelConfig};
pub use error::{Error, Result};
pub use rerank::{maxsim_score, rerank, DocumentDecoder, RerankRequest, ScoredDoc};
pub use rng::SplitMix64;
pub use train::{train_cq, LossKind, TrainConfig};
pub use types::{Code, DocumentCodes, DocumentTokens, EmbeddingMatrix, Mode, QuantizerSpec, TokenId};
