//! Huffman coding tree and hierarchical softmax.
//!
//! Every word is a leaf; the probability of a word given an input vector `u`
//! is the product of the binary decisions taken at the inner nodes on its
//! root-to-leaf path. A code bit of 1 means the word lies in the branch
//! scored by `σ(-⟨u′_n, u⟩)`, a bit of 0 by `σ(⟨u′_n, u⟩)`.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot};

/// Prefix codes and inner-node paths for every word of a vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanTree {
    codes: Vec<u8>,
    points: Vec<u32>,
    offsets: Vec<usize>,
    inner_count: usize,
}

impl HuffmanTree {
    /// Builds the tree from word counts. Merges always combine the two
    /// lightest live nodes; equal weights are resolved by node creation
    /// order (leaves are created first, in id order).
    pub fn build(counts: &[u64]) -> Result<Self> {
        let v = counts.len();
        if v == 0 {
            return Err(Error::Empty("vocabulary"));
        }
        if v == 1 {
            return Ok(HuffmanTree {
                codes: Vec::new(),
                points: Vec::new(),
                offsets: vec![0, 0],
                inner_count: 0,
            });
        }

        let total_nodes = 2 * v - 1;
        let mut parent = vec![0usize; total_nodes];
        let mut bit = vec![0u8; total_nodes];
        let mut heap: BinaryHeap<Reverse<(u64, usize)>> =
            counts.iter().enumerate().map(|(i, &c)| Reverse((c, i))).collect();
        for node in v..total_nodes {
            let Reverse((w1, n1)) = heap.pop().expect("two live nodes");
            let Reverse((w2, n2)) = heap.pop().expect("two live nodes");
            parent[n1] = node;
            parent[n2] = node;
            bit[n2] = 1;
            heap.push(Reverse((w1 + w2, node)));
        }
        let root = total_nodes - 1;

        let mut codes = Vec::new();
        let mut points = Vec::new();
        let mut offsets = Vec::with_capacity(v + 1);
        offsets.push(0);
        let mut rev_code = Vec::new();
        let mut rev_point = Vec::new();
        for leaf in 0..v {
            rev_code.clear();
            rev_point.clear();
            let mut node = leaf;
            while node != root {
                rev_code.push(bit[node]);
                node = parent[node];
                rev_point.push((node - v) as u32);
            }
            codes.extend(rev_code.iter().rev());
            points.extend(rev_point.iter().rev());
            offsets.push(codes.len());
        }
        Ok(HuffmanTree {
            codes,
            points,
            offsets,
            inner_count: v - 1,
        })
    }

    pub fn num_words(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of inner nodes: `V - 1`, or 0 for a single-word vocabulary.
    pub fn inner_count(&self) -> usize {
        self.inner_count
    }

    /// Branch directions from the root down to `word`.
    pub fn code(&self, word: u32) -> &[u8] {
        let w = word as usize;
        &self.codes[self.offsets[w]..self.offsets[w + 1]]
    }

    /// Inner-node ids from the root down to `word`, aligned with [`code`](Self::code).
    pub fn path(&self, word: u32) -> &[u32] {
        let w = word as usize;
        &self.points[self.offsets[w]..self.offsets[w + 1]]
    }
}

/// `build_huffman` from a vocabulary.
pub fn build_huffman(vocab: &crate::corpus::Vocabulary) -> Result<HuffmanTree> {
    HuffmanTree::build(vocab.counts())
}

/// Logistic function, evaluated without overflow for any finite input.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `ln σ(x)`, stable for large |x|.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -libm::log1p(libm::exp(-x))
    } else {
        x - libm::log1p(libm::exp(x))
    }
}

#[inline]
fn sign(bit: u8) -> f64 {
    1.0 - 2.0 * f64::from(bit)
}

/// `log p(word | u)` under the tree. `nodes` is the row-major
/// `inner_count × dim` matrix of node vectors.
pub fn hs_log_prob(tree: &HuffmanTree, nodes: &[f64], u: &[f64], word: u32) -> f64 {
    let dim = u.len();
    tree.path(word)
        .iter()
        .zip(tree.code(word))
        .map(|(&n, &b)| {
            let n = n as usize;
            log_sigmoid(sign(b) * dot(&nodes[n * dim..(n + 1) * dim], u))
        })
        .sum()
}

/// Gradient of [`hs_log_prob`] with respect to the input vector and the
/// node vectors on the word's path (all other nodes have zero gradient).
#[derive(Debug, Clone, PartialEq)]
pub struct HsGradients {
    pub input: Vec<f64>,
    pub nodes: Vec<(u32, Vec<f64>)>,
}

pub fn hs_gradients(tree: &HuffmanTree, nodes: &[f64], u: &[f64], word: u32) -> HsGradients {
    let dim = u.len();
    let mut input = vec![0.0; dim];
    let mut node_grads = Vec::with_capacity(tree.path(word).len());
    for (&n, &b) in tree.path(word).iter().zip(tree.code(word)) {
        let row = &nodes[n as usize * dim..(n as usize + 1) * dim];
        let g = hs_node_coefficient(b, dot(row, u));
        axpy(g, row, &mut input);
        node_grads.push((n, u.iter().map(|x| g * x).collect()));
    }
    HsGradients {
        input,
        nodes: node_grads,
    }
}

/// d/dx of `ln σ(s·x)` for code bit `bit`; equals `(1 - bit) - σ(x)`.
#[inline]
pub fn hs_node_coefficient(bit: u8, score: f64) -> f64 {
    (1.0 - f64::from(bit)) - sigmoid(score)
}
