//! Fixed per-word visual vectors and the uniform negative sampler.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{invalid, Error, Result};
use crate::linalg::norm;
use crate::rng::Rng;

const NOT_GROUNDED: u32 = u32::MAX;

/// Element-wise mean of per-image feature vectors.
pub fn aggregate_word_vector<V: AsRef<[f64]>>(images: &[V]) -> Result<Vec<f64>> {
    let first = images.first().ok_or(Error::Empty("image vector list"))?.as_ref();
    let dim = first.len();
    let mut sum = vec![0.0; dim];
    for img in images {
        let img = img.as_ref();
        if img.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: img.len(),
            });
        }
        for (s, x) in sum.iter_mut().zip(img) {
            *s += x;
        }
    }
    let n = images.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(sum)
}

/// Keeps the first `target_dim` components.
pub fn truncate(vector: &[f64], target_dim: usize) -> Result<Vec<f64>> {
    if target_dim > vector.len() {
        return Err(invalid(
            "target dimension",
            alloc::format!("{target_dim} exceeds vector dimension {}", vector.len()),
        ));
    }
    Ok(vector[..target_dim].to_vec())
}

/// Visual vectors for the grounded subset of a vocabulary. Immutable once
/// built.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualStore {
    dim: usize,
    words: Vec<u32>,
    vectors: Vec<f64>,
    norms: Vec<f64>,
    slot: Vec<u32>,
}

impl VisualStore {
    /// `entries` pairs vocabulary ids with their visual vector. Ids must be
    /// below `vocab_size` and unique.
    pub fn new(vocab_size: usize, entries: Vec<(u32, Vec<f64>)>) -> Result<Self> {
        let dim = entries.first().map_or(0, |(_, v)| v.len());
        let mut entries = entries;
        entries.sort_by_key(|(id, _)| *id);
        let mut slot = vec![NOT_GROUNDED; vocab_size];
        let mut words = Vec::with_capacity(entries.len());
        let mut vectors = Vec::with_capacity(entries.len() * dim);
        let mut norms = Vec::with_capacity(entries.len());
        for (id, v) in entries {
            if id as usize >= vocab_size {
                return Err(invalid("grounded word", alloc::format!("id {id} outside vocabulary")));
            }
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            if slot[id as usize] != NOT_GROUNDED {
                return Err(invalid("grounded word", alloc::format!("id {id} given twice")));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(invalid("visual vector", "non-finite component"));
            }
            slot[id as usize] = words.len() as u32;
            words.push(id);
            norms.push(norm(&v));
            vectors.extend(v);
        }
        Ok(VisualStore {
            dim,
            words,
            vectors,
            norms,
            slot,
        })
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

    pub fn vocab_size(&self) -> usize {
        self.slot.len()
    }

    /// Grounded word ids in ascending order.
    pub fn words(&self) -> &[u32] {
        &self.words
    }

    /// Position of `word` in [`words`](Self::words), if grounded.
    #[inline]
    pub fn slot(&self, word: u32) -> Option<usize> {
        match self.slot.get(word as usize) {
            Some(&s) if s != NOT_GROUNDED => Some(s as usize),
            _ => None,
        }
    }

    pub fn is_grounded(&self, word: u32) -> bool {
        self.slot(word).is_some()
    }

    pub fn get(&self, word: u32) -> Option<&[f64]> {
        self.slot(word).map(|s| self.vector_at(s))
    }

    #[inline]
    pub fn vector_at(&self, slot: usize) -> &[f64] {
        &self.vectors[slot * self.dim..(slot + 1) * self.dim]
    }

    #[inline]
    pub fn norm_at(&self, slot: usize) -> f64 {
        self.norms[slot]
    }

    /// A store holding only the given words (others are withheld).
    pub fn restrict(&self, keep: &[u32]) -> Result<Self> {
        let entries = keep
            .iter()
            .map(|&w| {
                self.get(w)
                    .map(|v| (w, v.to_vec()))
                    .ok_or_else(|| invalid("restricted word", alloc::format!("id {w} is not grounded")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut s = VisualStore::new(self.vocab_size(), entries)?;
        if s.is_empty() {
            s.dim = self.dim;
        }
        Ok(s)
    }

    /// FNV-1a over the layout and every stored bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        feed(self.dim as u64);
        for &w in &self.words {
            feed(u64::from(w));
        }
        for v in &self.vectors {
            feed(v.to_bits());
        }
        h
    }

    /// Draws `k` slots uniformly with replacement from all grounded words
    /// except `exclude`.
    pub fn sample_negative_slots(
        &self,
        exclude: u32,
        k: usize,
        rng: &mut Rng,
        out: &mut Vec<usize>,
    ) -> Result<()> {
        out.clear();
        if k == 0 {
            return Ok(());
        }
        let excluded = self.slot(exclude);
        let support = self.len() - usize::from(excluded.is_some());
        if support == 0 {
            return Err(invalid("negative sampling", "no grounded word besides the excluded one"));
        }
        for _ in 0..k {
            let mut s = rng.random_range(0..support);
            if let Some(e) = excluded {
                if s >= e {
                    s += 1;
                }
            }
            out.push(s);
        }
        Ok(())
    }
}

/// `k` negative visual vectors for `exclude`, drawn uniformly with
/// replacement from the other grounded words.
pub fn sample_negatives<'a>(
    store: &'a VisualStore,
    exclude: u32,
    k: usize,
    rng: &mut Rng,
) -> Result<Vec<&'a [f64]>> {
    let mut slots = Vec::with_capacity(k);
    store.sample_negative_slots(exclude, k, rng, &mut slots)?;
    Ok(slots.into_iter().map(|s| store.vector_at(s)).collect())
}
