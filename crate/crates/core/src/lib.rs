//! Neural network language models for ad-hoc retrieval: BM25 candidate
//! retrieval, count-based and feedforward neural language models with a
//! hierarchical softmax, per-document model adaptation, reranking by a mixed
//! unigram/neural score, and TREC-style evaluation.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod huffman;
pub mod io;
pub mod lm;
pub mod nn;
pub mod porter;
pub mod rerank;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
