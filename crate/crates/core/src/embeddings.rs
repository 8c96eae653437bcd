use alloc::string::String;
use alloc::vec::Vec;

use hashbrown::HashMap;

use crate::corpus::Vocabulary;
use crate::error::{invalid, Error, Result};
use crate::trainer::EmbeddingModel;

/// A word-keyed table of dense vectors, as emitted by training or read from
/// a vector file.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVectors {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, u32>,
    data: Vec<f64>,
}

impl WordVectors {
    pub fn new(dim: usize) -> Self {
        WordVectors {
            dim,
            words: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        }
    }

    pub fn push(&mut self, word: String, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        if self.index.contains_key(&word) {
            return Err(invalid("vector table", alloc::format!("duplicate word {word:?}")));
        }
        self.index.insert(word.clone(), self.words.len() as u32);
        self.words.push(word);
        self.data.extend_from_slice(v);
        Ok(())
    }

    /// Target vectors `U` of a trained model, in vocabulary order.
    pub fn from_model(model: &EmbeddingModel, vocab: &Vocabulary) -> Result<Self> {
        if model.vocab_size() != vocab.len() {
            return Err(Error::DimensionMismatch {
                expected: vocab.len(),
                got: model.vocab_size(),
            });
        }
        let mut out = WordVectors::new(model.dim());
        for (id, w) in vocab.words().iter().enumerate() {
            out.push(w.clone(), model.vector(id as u32))?;
        }
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn vector(&self, id: u32) -> &[f64] {
        let i = id as usize;
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.id(word).map(|i| self.vector(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> + '_ {
        self.words
            .iter()
            .zip(self.data.chunks_exact(self.dim.max(1)))
            .map(|(w, v)| (w.as_str(), v))
    }
}
