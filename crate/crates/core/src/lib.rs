//! Multimodal skip-gram: word embeddings trained jointly on text contexts
//! and, for a grounded subset of words, fixed visual vectors.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, threading and the
//! command line live in the `mmskipgram` crate.

#![no_std]

extern crate alloc;

pub mod corpus;
pub mod embeddings;
mod error;
pub mod eval;
pub mod hsoftmax;
pub mod linalg;
pub mod rng;
pub mod trainer;
pub mod visual;
pub mod xmodal;

pub use corpus::{build_vocabulary, keep_probability, Corpus, Tokenizer, Vocabulary};
pub use embeddings::WordVectors;
pub use error::{Error, Result};
pub use hsoftmax::HuffmanTree;
pub use linalg::Matrix;
pub use trainer::{train, EmbeddingModel, MapInit, Trainer, TrainingConfig, Variant};
pub use visual::VisualStore;
pub use xmodal::{LabeledVectors, RankedQuery, ZeroShotSpace, ZeroShotSplit};
