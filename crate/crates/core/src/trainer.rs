//! Joint linguistic and visual optimisation.
//!
//! Every target position receives a hierarchical-softmax ascent step for
//! each of its contexts. When the target word is grounded (and the variant
//! is multimodal) it then receives one descent step on the max-margin
//! visual loss, which compares the target embedding (variant A) or its
//! mapped image `z = M·u` (variant B) with the word's fixed visual vector
//! and `k` uniformly drawn negatives by cosine.

use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use rand::Rng as _;

use crate::corpus::{for_each_window, subsample_into, Corpus, Vocabulary};
use crate::error::{Error, Result};
use crate::hsoftmax::{hs_node_coefficient, HuffmanTree};
use crate::linalg::{axpy, dot, norm, Matrix, ZERO_NORM};
use crate::rng::{derive, Rng, Stream};
use crate::visual::VisualStore;

/// The learning rate never decays below this fraction of its start value.
pub const MIN_ALPHA_FRACTION: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    SkipGram,
    /// Hinge on the embedding itself; needs `dim == d_v`.
    MmA,
    /// Hinge on `M·u` with a jointly learned mapping `M`.
    MmB,
}

impl Variant {
    pub fn is_multimodal(self) -> bool {
        self != Variant::SkipGram
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapInit {
    /// Uniform in `±1/sqrt(dim)`.
    Random,
    /// Identity; requires `d_v == dim`.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub variant: Variant,
    pub dim: usize,
    pub window: usize,
    /// Subsampling threshold `t`; `f64::INFINITY` disables subsampling.
    pub sample: f64,
    pub epochs: usize,
    pub alpha: f64,
    pub margin: f64,
    pub negatives: usize,
    /// L2 strength on the mapping matrix (variant B only).
    pub l2: f64,
    pub threads: usize,
    pub seed: u64,
    pub min_count: u64,
    pub map_init: MapInit,
    /// Keep `M` fixed at its initial value (no hinge or L2 updates).
    pub freeze_map: bool,
}

impl TrainingConfig {
    /// Defaults for a variant: 300 dimensions, window 5, `t = 1e-3`;
    /// A uses `k = 20, γ = 0.5`, B uses `k = 5, γ = 0.5, λ = 1e-4`.
    pub fn new(variant: Variant) -> Self {
        let (negatives, margin, l2) = match variant {
            Variant::SkipGram => (0, 0.0, 0.0),
            Variant::MmA => (20, 0.5, 0.0),
            Variant::MmB => (5, 0.5, 1e-4),
        };
        TrainingConfig {
            variant,
            dim: 300,
            window: 5,
            sample: 1e-3,
            epochs: 1,
            alpha: 0.025,
            margin,
            negatives,
            l2,
            threads: 1,
            seed: 1,
            min_count: 5,
            map_init: MapInit::Random,
            freeze_map: false,
        }
    }

    /// Checks the configuration on its own and against the visual store.
    pub fn validate(&self, store: Option<&VisualStore>) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.dim == 0 {
            return fail("dimension must be positive");
        }
        if self.window == 0 {
            return fail("window must be positive");
        }
        if self.sample.is_nan() || self.sample <= 0.0 {
            return fail("subsample threshold must be positive");
        }
        if self.epochs == 0 {
            return fail("epochs must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return fail("learning rate must be positive");
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return fail("margin must be non-negative");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return fail("l2 strength must be non-negative");
        }
        if self.threads == 0 {
            return fail("threads must be positive");
        }
        if !self.variant.is_multimodal() {
            return Ok(());
        }
        let store = match store {
            Some(s) if !s.is_empty() => s,
            _ => return fail("multimodal variants need a non-empty visual store"),
        };
        if self.negatives > 0 && store.len() < 2 {
            return fail("negative sampling needs at least two grounded words");
        }
        if self.variant == Variant::MmA && store.dim() != self.dim {
            return Err(Error::Config(alloc::format!(
                "variant A compares embeddings with visual vectors directly: dim {} != visual dim {}",
                self.dim,
                store.dim()
            )));
        }
        if self.variant == Variant::MmB && self.map_init == MapInit::Identity && store.dim() != self.dim {
            return fail("identity mapping needs visual dim == dim");
        }
        Ok(())
    }
}

/// Target vectors `U`, inner-node vectors `U′` and (variant B) the mapping `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    dim: usize,
    input: Vec<f64>,
    nodes: Vec<f64>,
    map: Option<Matrix>,
}

impl EmbeddingModel {
    pub fn from_parts(dim: usize, input: Vec<f64>, nodes: Vec<f64>, map: Option<Matrix>) -> Result<Self> {
        if dim == 0 || !input.len().is_multiple_of(dim) || !nodes.len().is_multiple_of(dim) {
            return Err(Error::Config("parameter matrices do not match dim".into()));
        }
        if let Some(m) = &map {
            if m.cols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: m.cols(),
                });
            }
        }
        Ok(EmbeddingModel {
            dim,
            input,
            nodes,
            map,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.input.len() / self.dim
    }

    /// Row `u_w` of the target matrix.
    pub fn vector(&self, word: u32) -> &[f64] {
        let w = word as usize;
        &self.input[w * self.dim..(w + 1) * self.dim]
    }

    pub fn vector_mut(&mut self, word: u32) -> &mut [f64] {
        let w = word as usize;
        &mut self.input[w * self.dim..(w + 1) * self.dim]
    }

    pub fn input(&self) -> &[f64] {
        &self.input
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn nodes_mut(&mut self) -> &mut [f64] {
        &mut self.nodes
    }

    pub fn map(&self) -> Option<&Matrix> {
        self.map.as_ref()
    }

    pub fn map_mut(&mut self) -> Option<&mut Matrix> {
        self.map.as_mut()
    }

    pub fn is_finite(&self) -> bool {
        self.input.iter().chain(&self.nodes).all(|x| x.is_finite())
            && self.map.as_ref().is_none_or(Matrix::is_finite)
    }

    /// Exact equality of every parameter's bit pattern.
    pub fn bits_eq(&self, other: &Self) -> bool {
        fn same(a: &[f64], b: &[f64]) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        self.dim == other.dim
            && same(&self.input, &other.input)
            && same(&self.nodes, &other.nodes)
            && match (&self.map, &other.map) {
                (None, None) => true,
                (Some(a), Some(b)) => a.rows() == b.rows() && same(a.as_slice(), b.as_slice()),
                _ => false,
            }
    }
}

/// Fresh parameters: `U ~ U(±0.5/dim)`, `U′ = 0`, and for variant B
/// `M ~ U(±1/sqrt(dim))` (or the identity) of shape `visual_dim × dim`.
pub fn init_model(
    config: &TrainingConfig,
    vocab_size: usize,
    visual_dim: Option<usize>,
    rng: &mut Rng,
) -> Result<EmbeddingModel> {
    let dim = config.dim;
    let scale = 0.5 / dim as f64;
    let input = (0..vocab_size * dim)
        .map(|_| (rng.random::<f64>() - 0.5) * 2.0 * scale)
        .collect();
    let nodes = vec![0.0; vocab_size.saturating_sub(1) * dim];
    let map = match config.variant {
        Variant::MmB => {
            let rows = visual_dim.ok_or_else(|| Error::Config("variant B needs the visual dimension".into()))?;
            Some(match config.map_init {
                MapInit::Identity => {
                    if rows != dim {
                        return Err(Error::Config("identity mapping needs visual dim == dim".into()));
                    }
                    Matrix::identity(dim)
                }
                MapInit::Random => {
                    let bound = 1.0 / libm::sqrt(dim as f64);
                    let data = (0..rows * dim)
                        .map(|_| (rng.random::<f64>() - 0.5) * 2.0 * bound)
                        .collect();
                    Matrix::from_row_major(rows, dim, data)?
                }
            })
        }
        _ => None,
    };
    Ok(EmbeddingModel {
        dim,
        input,
        nodes,
        map,
    })
}

/// Reusable scratch buffers for one training worker.
#[derive(Debug, Default, Clone)]
pub struct Workspace {
    neu1e: Vec<f64>,
    grad: Vec<f64>,
    grad_u: Vec<f64>,
    z: Vec<f64>,
    negatives: Vec<usize>,
    kept: Vec<u32>,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One hierarchical-softmax ascent step with rate `alpha` for every
/// `(target, context)` pair. Touches `u_target` and the nodes on each
/// context word's path only.
pub fn ling_step<I>(
    model: &mut EmbeddingModel,
    tree: &HuffmanTree,
    target: u32,
    contexts: I,
    alpha: f64,
    ws: &mut Workspace,
) where
    I: IntoIterator<Item = u32>,
{
    let dim = model.dim;
    ws.neu1e.resize(dim, 0.0);
    let t = target as usize;
    for context in contexts {
        ws.neu1e.iter_mut().for_each(|x| *x = 0.0);
        let u = &mut model.input[t * dim..(t + 1) * dim];
        for (&n, &bit) in tree.path(context).iter().zip(tree.code(context)) {
            let row = &mut model.nodes[n as usize * dim..(n as usize + 1) * dim];
            let g = alpha * hs_node_coefficient(bit, dot(u, row));
            for ((e, r), &x) in ws.neu1e.iter_mut().zip(row.iter_mut()).zip(u.iter()) {
                *e += g * *r;
                *r += g * x;
            }
        }
        axpy(1.0, &ws.neu1e, u);
    }
}

#[inline]
fn cos_with(u: &[f64], nu: f64, v: &[f64], nv: f64) -> f64 {
    if nv < ZERO_NORM {
        0.0
    } else {
        dot(u, v) / (nu * nv)
    }
}

/// Max-margin loss `Σ_neg max(0, γ − cos(u, v⁺) + cos(u, v⁻))` and its
/// gradient with respect to `u`, written into `grad`. Vectors come with
/// precomputed norms. A (near) zero-norm `u` or `v` contributes cosine 0 and
/// no gradient. Returns `(loss, active hinge count)`.
pub fn hinge_gradient<'v, I>(
    u: &[f64],
    positive: (&[f64], f64),
    negatives: I,
    margin: f64,
    grad: &mut Vec<f64>,
) -> (f64, usize)
where
    I: IntoIterator<Item = (&'v [f64], f64)>,
{
    grad.clear();
    grad.resize(u.len(), 0.0);
    let nu = norm(u);
    if nu < ZERO_NORM {
        let loss = negatives.into_iter().map(|_| margin.max(0.0)).sum();
        return (loss, 0);
    }
    let (vp, np) = positive;
    let cos_p = cos_with(u, nu, vp, np);
    let inv_nu2 = 1.0 / (nu * nu);
    let mut loss = 0.0;
    let mut active = 0usize;
    let mut coef_u = 0.0;
    for (vn, nn) in negatives {
        let cos_n = cos_with(u, nu, vn, nn);
        let term = margin - cos_p + cos_n;
        if term > 0.0 {
            loss += term;
            active += 1;
            if nn >= ZERO_NORM {
                axpy(1.0 / (nu * nn), vn, grad);
                coef_u -= cos_n * inv_nu2;
            }
        }
    }
    if active > 0 && np >= ZERO_NORM {
        let a = active as f64;
        axpy(-a / (nu * np), vp, grad);
        coef_u += a * cos_p * inv_nu2;
    }
    if active > 0 {
        axpy(coef_u, u, grad);
    }
    (loss, active)
}

/// The variant-A visual loss for explicit vectors.
pub fn visual_loss_a(u: &[f64], v_pos: &[f64], negatives: &[&[f64]], margin: f64) -> f64 {
    let mut grad = Vec::new();
    hinge_gradient(
        u,
        (v_pos, norm(v_pos)),
        negatives.iter().map(|v| (*v, norm(v))),
        margin,
        &mut grad,
    )
    .0
}

/// Outcome of one visual step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisualStepOutcome {
    pub loss: f64,
    pub active: usize,
}

fn grounded_slot(store: &VisualStore, word: u32) -> Result<usize> {
    store
        .slot(word)
        .ok_or_else(|| crate::error::invalid("visual step", alloc::format!("word {word} is not grounded")))
}

/// Descends the variant-A loss with respect to `u_word` only.
#[allow(clippy::too_many_arguments)]
pub fn visual_step_a(
    model: &mut EmbeddingModel,
    store: &VisualStore,
    word: u32,
    alpha: f64,
    margin: f64,
    k: usize,
    rng: &mut Rng,
    ws: &mut Workspace,
) -> Result<VisualStepOutcome> {
    let slot = grounded_slot(store, word)?;
    if store.dim() != model.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            got: store.dim(),
        });
    }
    store.sample_negative_slots(word, k, rng, &mut ws.negatives)?;
    let w = word as usize;
    let dim = model.dim;
    let u = &mut model.input[w * dim..(w + 1) * dim];
    let (loss, active) = hinge_gradient(
        u,
        (store.vector_at(slot), store.norm_at(slot)),
        ws.negatives.iter().map(|&s| (store.vector_at(s), store.norm_at(s))),
        margin,
        &mut ws.grad,
    );
    if active > 0 {
        axpy(-alpha, &ws.grad, u);
    }
    Ok(VisualStepOutcome { loss, active })
}

/// Descends the variant-B loss on `z = M·u_word` with respect to both `u`
/// and `M`, then applies the L2 shrink `M ← M − α·λ·M` (skipped when
/// `freeze_map` is set).
#[allow(clippy::too_many_arguments)]
pub fn visual_step_b(
    model: &mut EmbeddingModel,
    store: &VisualStore,
    word: u32,
    alpha: f64,
    margin: f64,
    k: usize,
    l2: f64,
    freeze_map: bool,
    rng: &mut Rng,
    ws: &mut Workspace,
) -> Result<VisualStepOutcome> {
    let slot = grounded_slot(store, word)?;
    let dim = model.dim;
    let map = model
        .map
        .as_mut()
        .ok_or_else(|| Error::Config("variant B step on a model without mapping".into()))?;
    if map.rows() != store.dim() {
        return Err(Error::DimensionMismatch {
            expected: map.rows(),
            got: store.dim(),
        });
    }
    store.sample_negative_slots(word, k, rng, &mut ws.negatives)?;
    let w = word as usize;
    let u = &mut model.input[w * dim..(w + 1) * dim];
    ws.z.resize(map.rows(), 0.0);
    map.mul_vec_into(u, &mut ws.z);
    let (loss, active) = hinge_gradient(
        &ws.z,
        (store.vector_at(slot), store.norm_at(slot)),
        ws.negatives.iter().map(|&s| (store.vector_at(s), store.norm_at(s))),
        margin,
        &mut ws.grad,
    );
    if active > 0 {
        ws.grad_u.resize(dim, 0.0);
        map.tr_mul_vec_into(&ws.grad, &mut ws.grad_u);
    }
    if !freeze_map {
        let cols = map.cols();
        let shrink = alpha * l2;
        for (r, row) in map.as_mut_slice().chunks_exact_mut(cols).enumerate() {
            let g = if active > 0 { alpha * ws.grad[r] } else { 0.0 };
            for (m, &uj) in row.iter_mut().zip(u.iter()) {
                *m -= g * uj + shrink * *m;
            }
        }
    }
    if active > 0 {
        axpy(-alpha, &ws.grad_u, u);
    }
    Ok(VisualStepOutcome { loss, active })
}

/// Counters accumulated by a training run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TrainStats {
    pub tokens: u64,
    pub kept_tokens: u64,
    pub pairs: u64,
    pub visual_steps: u64,
    pub visual_loss: f64,
}

impl TrainStats {
    pub fn merge(&mut self, other: &TrainStats) {
        self.tokens += other.tokens;
        self.kept_tokens += other.kept_tokens;
        self.pairs += other.pairs;
        self.visual_steps += other.visual_steps;
        self.visual_loss += other.visual_loss;
    }
}

/// Validated training setup shared by all workers.
#[derive(Debug)]
pub struct Trainer<'a> {
    config: &'a TrainingConfig,
    tree: HuffmanTree,
    keep: Vec<f64>,
    store: Option<&'a VisualStore>,
    scheduled: u64,
    vocab_size: usize,
}

impl<'a> Trainer<'a> {
    /// `corpus_tokens` is the number of in-vocabulary tokens per epoch; the
    /// learning rate decays linearly over `epochs × corpus_tokens`.
    pub fn new(
        config: &'a TrainingConfig,
        vocab: &Vocabulary,
        store: Option<&'a VisualStore>,
        corpus_tokens: usize,
    ) -> Result<Self> {
        config.validate(store)?;
        if let Some(s) = store {
            if config.variant.is_multimodal() && s.vocab_size() != vocab.len() {
                return Err(Error::Config("visual store was built for a different vocabulary".into()));
            }
        }
        let tree = HuffmanTree::build(vocab.counts())?;
        let keep = vocab.keep_probabilities(config.sample)?;
        Ok(Trainer {
            config,
            tree,
            keep,
            store: if config.variant.is_multimodal() { store } else { None },
            scheduled: (config.epochs as u64) * corpus_tokens as u64,
            vocab_size: vocab.len(),
        })
    }

    pub fn config(&self) -> &TrainingConfig {
        self.config
    }

    pub fn tree(&self) -> &HuffmanTree {
        &self.tree
    }

    pub fn scheduled_tokens(&self) -> u64 {
        self.scheduled
    }

    /// Linear decay from `α₀` to `α₀·1e-4` over the scheduled tokens.
    pub fn learning_rate(&self, processed: u64) -> f64 {
        let frac = if self.scheduled == 0 {
            0.0
        } else {
            processed as f64 / self.scheduled as f64
        };
        self.config.alpha * (1.0 - frac).max(MIN_ALPHA_FRACTION)
    }

    pub fn init_model(&self) -> Result<EmbeddingModel> {
        let mut rng = derive(self.config.seed, Stream::Init);
        init_model(self.config, self.vocab_size, self.store.map(VisualStore::dim), &mut rng)
    }

    /// Trains on a sequence of sentences. `progress` counts tokens consumed
    /// by all workers and drives the learning-rate schedule.
    pub fn train_sentences<'s, I>(
        &self,
        model: &mut EmbeddingModel,
        sentences: I,
        rng: &mut Rng,
        progress: &AtomicU64,
        ws: &mut Workspace,
    ) -> Result<TrainStats>
    where
        I: IntoIterator<Item = &'s [u32]>,
    {
        let cfg = self.config;
        let mut stats = TrainStats::default();
        let mut kept = core::mem::take(&mut ws.kept);
        let mut result = Ok(());
        for sentence in sentences {
            let processed = progress.fetch_add(sentence.len() as u64, Ordering::Relaxed);
            let alpha = self.learning_rate(processed);
            stats.tokens += sentence.len() as u64;
            subsample_into(sentence, &self.keep, rng, &mut kept);
            stats.kept_tokens += kept.len() as u64;
            for_each_window(&kept, cfg.window, |w| {
                if result.is_err() {
                    return;
                }
                stats.pairs += (w.left.len() + w.right.len()) as u64;
                ling_step(model, &self.tree, w.target, w.contexts(), alpha, ws);
                let Some(store) = self.store else { return };
                if !store.is_grounded(w.target) {
                    return;
                }
                let outcome = match cfg.variant {
                    Variant::MmA => visual_step_a(model, store, w.target, alpha, cfg.margin, cfg.negatives, rng, ws),
                    Variant::MmB => visual_step_b(
                        model,
                        store,
                        w.target,
                        alpha,
                        cfg.margin,
                        cfg.negatives,
                        cfg.l2,
                        cfg.freeze_map,
                        rng,
                        ws,
                    ),
                    Variant::SkipGram => unreachable!("store is dropped for skip-gram"),
                };
                match outcome {
                    Ok(o) => {
                        stats.visual_steps += 1;
                        stats.visual_loss += o.loss;
                    }
                    Err(e) => result = Err(e),
                }
            });
            result.clone()?;
        }
        ws.kept = kept;
        Ok(stats)
    }
}

/// Single-threaded training run: returns the final model.
pub fn train(
    config: &TrainingConfig,
    vocab: &Vocabulary,
    corpus: &Corpus,
    store: Option<&VisualStore>,
) -> Result<EmbeddingModel> {
    train_with_stats(config, vocab, corpus, store).map(|(m, _)| m)
}

pub fn train_with_stats(
    config: &TrainingConfig,
    vocab: &Vocabulary,
    corpus: &Corpus,
    store: Option<&VisualStore>,
) -> Result<(EmbeddingModel, TrainStats)> {
    let trainer = Trainer::new(config, vocab, store, corpus.len())?;
    let mut model = trainer.init_model()?;
    let mut rng = derive(config.seed, Stream::Worker(0));
    let progress = AtomicU64::new(0);
    let mut ws = Workspace::new();
    let mut stats = TrainStats::default();
    for epoch in 0..config.epochs {
        let s = trainer.train_sentences(&mut model, corpus.sentences(), &mut rng, &progress, &mut ws)?;
        stats.merge(&s);
        if !model.is_finite() {
            return Err(Error::NonFinite { epoch });
        }
    }
    Ok((model, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, Tokenizer};
    use crate::hsoftmax::hs_log_prob;

    fn rand_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn small_config(variant: Variant, dim: usize) -> TrainingConfig {
        TrainingConfig {
            dim,
            min_count: 1,
            ..TrainingConfig::new(variant)
        }
    }

    #[test]
    fn init_ranges_and_determinism() {
        let cfg = small_config(Variant::MmB, 300);
        let mut r1 = derive(3, Stream::Init);
        let m = init_model(&cfg, 20, Some(50), &mut r1).unwrap();
        assert!(m.input().iter().all(|x| x.abs() <= 0.5 / 300.0));
        assert!(m.nodes().iter().all(|&x| x == 0.0));
        assert_eq!(m.nodes().len(), 19 * 300);
        let bound = 1.0 / libm::sqrt(300.0);
        let map = m.map().unwrap();
        assert_eq!((map.rows(), map.cols()), (50, 300));
        assert!(map.as_slice().iter().all(|x| x.abs() <= bound));
        let mut r2 = derive(3, Stream::Init);
        assert!(m.bits_eq(&init_model(&cfg, 20, Some(50), &mut r2).unwrap()));
    }

    #[test]
    fn config_validation() {
        let v = VisualStore::new(3, vec![(0, vec![1.0; 4]), (1, vec![0.5; 4])]).unwrap();
        let mut cfg = small_config(Variant::MmA, 4);
        assert!(cfg.validate(Some(&v)).is_ok());
        assert!(cfg.validate(None).is_err());
        cfg.dim = 5;
        assert!(cfg.validate(Some(&v)).is_err());
        let mut b = small_config(Variant::MmB, 5);
        assert!(b.validate(Some(&v)).is_ok());
        b.map_init = MapInit::Identity;
        assert!(b.validate(Some(&v)).is_err());
        let mut s = small_config(Variant::SkipGram, 5);
        assert!(s.validate(None).is_ok());
        s.margin = -1.0;
        assert!(s.validate(None).is_err());
        let one = VisualStore::new(3, vec![(0, vec![1.0; 4])]).unwrap();
        assert!(small_config(Variant::MmA, 4).validate(Some(&one)).is_err());
    }

    fn tiny_model(v: usize, dim: usize, seed: u64) -> (HuffmanTree, EmbeddingModel) {
        let mut rng = derive(seed, Stream::Init);
        let counts: Vec<u64> = (0..v).map(|_| rng.random_range(1..100)).collect();
        let tree = HuffmanTree::build(&counts).unwrap();
        let input = rand_vec(&mut rng, v * dim);
        let nodes = rand_vec(&mut rng, (v - 1) * dim);
        (tree, EmbeddingModel::from_parts(dim, input, nodes, None).unwrap())
    }

    #[test]
    fn ling_step_from_zero_nodes() {
        let (tree, mut m) = tiny_model(10, 4, 1);
        m.nodes_mut().iter_mut().for_each(|x| *x = 0.0);
        let u = m.vector(2).to_vec();
        let alpha = 0.1;
        ling_step(&mut m, &tree, 2, [5], alpha, &mut Workspace::new());
        // σ(0) = 1/2, so each path node moves by ±α/2·u and u does not move.
        assert_eq!(m.vector(2), &u[..]);
        for (&n, &bit) in tree.path(5).iter().zip(tree.code(5)) {
            let row = &m.nodes()[n as usize * 4..(n as usize + 1) * 4];
            let s = (1.0 - f64::from(bit)) - 0.5;
            for i in 0..4 {
                assert!((row[i] - alpha * s * u[i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn ling_step_increases_log_prob() {
        for seed in 0..20 {
            let (tree, mut m) = tiny_model(10, 4, 10 + seed);
            let (t, c) = ((seed % 10) as u32, ((seed + 3) % 10) as u32);
            let before = hs_log_prob(&tree, m.nodes(), m.vector(t), c);
            ling_step(&mut m, &tree, t, [c], 1e-3, &mut Workspace::new());
            let after = hs_log_prob(&tree, m.nodes(), m.vector(t), c);
            assert!(after > before, "{before} -> {after}");
        }
    }

    #[test]
    fn ling_step_touches_only_target_and_path() {
        let (tree, mut m) = tiny_model(10, 4, 5);
        let before = m.clone();
        ling_step(&mut m, &tree, 3, [7], 0.05, &mut Workspace::new());
        for w in 0..10 {
            if w != 3 {
                assert_eq!(m.vector(w), before.vector(w));
            }
        }
        for n in 0..9u32 {
            if !tree.path(7).contains(&n) {
                assert_eq!(m.nodes()[n as usize * 4..][..4], before.nodes()[n as usize * 4..][..4]);
            }
        }
        let mut same = m.clone();
        ling_step(&mut same, &tree, 3, core::iter::empty(), 0.05, &mut Workspace::new());
        assert!(same.bits_eq(&m));
    }

    #[test]
    fn hinge_loss_reference_values() {
        let vp = [1.0, 0.0];
        let vn = [0.0, 1.0];
        assert_eq!(visual_loss_a(&[2.0, 0.0], &vp, &[&vn, &vn], 0.5), 0.0);
        assert!((visual_loss_a(&[0.0, 3.0], &vp, &[&vn], 0.5) - 1.5).abs() < 1e-15);
        assert!(visual_loss_a(&[0.0, 3.0], &vp, &[], 0.5) == 0.0);
    }

    fn scalar_cos(a: &[f64], b: &[f64]) -> f64 {
        let mut ab = 0.0;
        let mut aa = 0.0;
        let mut bb = 0.0;
        for i in 0..a.len() {
            ab += a[i] * b[i];
            aa += a[i] * a[i];
            bb += b[i] * b[i];
        }
        ab / (libm::sqrt(aa) * libm::sqrt(bb))
    }

    #[test]
    fn hinge_loss_matches_scalar_recomputation() {
        let mut rng = derive(8, Stream::Init);
        for _ in 0..200 {
            let u = rand_vec(&mut rng, 10);
            let vp = rand_vec(&mut rng, 10);
            let negs: Vec<Vec<f64>> = (0..5).map(|_| rand_vec(&mut rng, 10)).collect();
            let refs: Vec<&[f64]> = negs.iter().map(|v| &v[..]).collect();
            let got = visual_loss_a(&u, &vp, &refs, 0.5);
            let cp = scalar_cos(&u, &vp);
            let expect: f64 = negs.iter().map(|n| (0.5 - cp + scalar_cos(&u, n)).max(0.0)).sum();
            assert!((got - expect).abs() < 1e-12);
            assert!((0.0..=5.0 * 2.5).contains(&got));
        }
    }

    #[test]
    fn zero_norm_input_has_no_gradient() {
        let mut g = Vec::new();
        let (loss, active) = hinge_gradient(&[0.0, 0.0], (&[1.0, 0.0], 1.0), [(&[0.0, 1.0][..], 1.0)], 0.5, &mut g);
        assert_eq!((loss, active), (0.5, 0));
        assert!(g.iter().all(|&x| x == 0.0));
    }

    fn grounded_store(vocab: usize, dim: usize, n: usize, rng: &mut Rng) -> VisualStore {
        let entries = (0..n as u32).map(|w| (w, rand_vec(rng, dim))).collect();
        VisualStore::new(vocab, entries).unwrap()
    }

    #[test]
    fn visual_step_a_follows_finite_differences() {
        let h = 1e-5;
        let mut rng = derive(21, Stream::Init);
        for trial in 0..50 {
            let store = grounded_store(6, 4, 6, &mut rng);
            let (_, mut m) = tiny_model(6, 4, 30 + trial);
            let word = (trial % 6) as u32;
            let mut srng = derive(trial, Stream::Worker(0));
            let mut negs = Vec::new();
            store.sample_negative_slots(word, 5, &mut srng.clone(), &mut negs).unwrap();
            let neg_vecs: Vec<&[f64]> = negs.iter().map(|&s| store.vector_at(s)).collect();
            let vpos = store.get(word).unwrap();
            let loss = |u: &[f64]| visual_loss_a(u, vpos, &neg_vecs, 0.5);
            let u0 = m.vector(word).to_vec();
            let alpha = 1e-3;
            let mut ws = Workspace::new();
            visual_step_a(&mut m, &store, word, alpha, 0.5, 5, &mut srng, &mut ws).unwrap();
            let mut u = u0.clone();
            for i in 0..4 {
                u[i] = u0[i] + h;
                let fp = loss(&u);
                u[i] = u0[i] - h;
                let fm = loss(&u);
                u[i] = u0[i];
                let fd = (fp - fm) / (2.0 * h);
                let analytic = (u0[i] - m.vector(word)[i]) / alpha;
                let scale = fd.abs().max(analytic.abs()).max(1e-6);
                assert!((fd - analytic).abs() / scale < 1e-5, "trial {trial}: {fd} vs {analytic}");
            }
        }
    }

    #[test]
    fn inactive_hinges_leave_u_unchanged() {
        let store = VisualStore::new(3, vec![(0, vec![1.0, 0.0]), (1, vec![0.0, 1.0]), (2, vec![0.0, 1.0])])
            .unwrap();
        let mut m = EmbeddingModel::from_parts(2, vec![5.0, 0.0, 1.0, 1.0, 1.0, 1.0], vec![0.0; 4], None).unwrap();
        let before = m.clone();
        let mut rng = derive(1, Stream::Worker(0));
        let o = visual_step_a(&mut m, &store, 0, 0.1, 0.5, 4, &mut rng, &mut Workspace::new()).unwrap();
        assert_eq!(o.active, 0);
        assert!(m.bits_eq(&before));
    }

    #[test]
    fn repeated_steps_widen_the_margin() {
        let mut rng = derive(12, Stream::Init);
        let store = grounded_store(4, 6, 4, &mut rng);
        let (_, mut m) = tiny_model(4, 6, 77);
        let word = 1;
        let seedr = derive(5, Stream::Worker(0));
        let mut negs = Vec::new();
        store.sample_negative_slots(word, 3, &mut seedr.clone(), &mut negs).unwrap();
        let gap = |u: &[f64]| {
            let cp = scalar_cos(u, store.get(word).unwrap());
            let worst = negs.iter().map(|&s| scalar_cos(u, store.vector_at(s))).fold(f64::MIN, f64::max);
            cp - worst
        };
        let mut prev = gap(m.vector(word));
        for _ in 0..500 {
            // the same negatives every time
            let mut r = seedr.clone();
            let o = visual_step_a(&mut m, &store, word, 0.01, 0.5, 3, &mut r, &mut Workspace::new()).unwrap();
            let g = gap(m.vector(word));
            if o.active == 0 {
                break;
            }
            assert!(g >= prev - 1e-12, "{prev} -> {g}");
            prev = g;
        }
        assert!(prev > 0.0);
    }

    #[test]
    fn identity_mapping_reproduces_variant_a() {
        let mut rng = derive(40, Stream::Init);
        let store = grounded_store(6, 4, 6, &mut rng);
        let (_, mut a) = tiny_model(6, 4, 41);
        let mut b = EmbeddingModel::from_parts(4, a.input().to_vec(), a.nodes().to_vec(), Some(Matrix::identity(4)))
            .unwrap();
        let mut ra = derive(2, Stream::Worker(0));
        let mut rb = ra.clone();
        for step in 0..30 {
            let w = (step % 6) as u32;
            visual_step_a(&mut a, &store, w, 0.05, 0.5, 5, &mut ra, &mut Workspace::new()).unwrap();
            visual_step_b(&mut b, &store, w, 0.05, 0.5, 5, 0.0, true, &mut rb, &mut Workspace::new()).unwrap();
        }
        assert!(a.input().iter().zip(b.input()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(b.map().unwrap(), &Matrix::identity(4));
    }

    #[test]
    fn inactive_hinge_only_shrinks_map() {
        // γ = 0, z = u along v_pos, negative orthogonal to z
        let store = VisualStore::new(2, vec![(0, vec![1.0, 0.0]), (1, vec![0.0, 1.0])]).unwrap();
        let map = Matrix::from_row_major(2, 2, vec![1.0, 0.5, 0.0, 0.25]).unwrap();
        let mut m = EmbeddingModel::from_parts(2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0; 2], Some(map.clone())).unwrap();
        let mut rng = derive(1, Stream::Worker(0));
        let (alpha, l2) = (0.1, 0.01);
        let o = visual_step_b(&mut m, &store, 0, alpha, 0.0, 3, l2, false, &mut rng, &mut Workspace::new()).unwrap();
        assert_eq!(o.active, 0);
        assert_eq!(m.vector(0), &[1.0, 0.0]);
        for (got, orig) in m.map().unwrap().as_slice().iter().zip(map.as_slice()) {
            assert!((got - orig * (1.0 - alpha * l2)).abs() < 1e-15);
        }
    }

    #[test]
    fn visual_step_b_follows_finite_differences() {
        let h = 1e-5;
        let mut rng = derive(50, Stream::Init);
        for trial in 0..40 {
            let store = grounded_store(5, 3, 5, &mut rng);
            let dim = 4;
            let u0 = rand_vec(&mut rng, 5 * dim);
            let m0 = Matrix::from_row_major(3, dim, rand_vec(&mut rng, 3 * dim)).unwrap();
            let mut model = EmbeddingModel::from_parts(dim, u0.clone(), vec![0.0; 4 * dim], Some(m0.clone())).unwrap();
            let word = (trial % 5) as u32;
            let mut srng = derive(trial, Stream::Worker(0));
            let mut negs = Vec::new();
            store.sample_negative_slots(word, 5, &mut srng.clone(), &mut negs).unwrap();
            let neg_vecs: Vec<&[f64]> = negs.iter().map(|&s| store.vector_at(s)).collect();
            let vpos = store.get(word).unwrap();
            let loss = |u: &[f64], m: &Matrix| visual_loss_a(&m.mul_vec(u), vpos, &neg_vecs, 0.5);
            let alpha = 1e-3;
            visual_step_b(&mut model, &store, word, alpha, 0.5, 5, 0.0, false, &mut srng, &mut Workspace::new())
                .unwrap();
            let w = word as usize;
            let mut u = u0[w * dim..(w + 1) * dim].to_vec();
            let check = |fd: f64, analytic: f64| {
                let scale = fd.abs().max(analytic.abs()).max(1e-6);
                assert!((fd - analytic).abs() / scale < 1e-5, "trial {trial}: {fd} vs {analytic}");
            };
            for i in 0..dim {
                let orig = u[i];
                u[i] = orig + h;
                let fp = loss(&u, &m0);
                u[i] = orig - h;
                let fm = loss(&u, &m0);
                u[i] = orig;
                check((fp - fm) / (2.0 * h), (orig - model.vector(word)[i]) / alpha);
            }
            let mut m = m0.clone();
            for k in 0..3 * dim {
                let orig = m.as_slice()[k];
                m.as_mut_slice()[k] = orig + h;
                let fp = loss(&u, &m);
                m.as_mut_slice()[k] = orig - h;
                let fm = loss(&u, &m);
                m.as_mut_slice()[k] = orig;
                check((fp - fm) / (2.0 * h), (orig - model.map().unwrap().as_slice()[k]) / alpha);
            }
        }
    }

    fn toy_corpus(text: &str) -> (Vocabulary, Corpus) {
        let v = build_vocabulary(text.split_whitespace(), 1).unwrap();
        let c = Corpus::encode(text.lines(), &v, Tokenizer::default());
        (v, c)
    }

    #[test]
    fn single_thread_training_is_deterministic() {
        let text = "the cat sat on the mat\nthe dog sat on the log\na cat and a dog\n".repeat(30);
        let (v, c) = toy_corpus(&text);
        let mut cfg = small_config(Variant::SkipGram, 8);
        cfg.epochs = 2;
        let a = train(&cfg, &v, &c, None).unwrap();
        let b = train(&cfg, &v, &c, None).unwrap();
        assert!(a.bits_eq(&b));
        assert!(a.is_finite());
        cfg.seed = 2;
        assert!(!a.bits_eq(&train(&cfg, &v, &c, None).unwrap()));
    }

    #[test]
    fn skipgram_ignores_the_store() {
        let text = "the cat sat on the mat\nthe dog sat on the log\n".repeat(20);
        let (v, c) = toy_corpus(&text);
        let mut rng = derive(3, Stream::Init);
        let store = grounded_store(v.len(), 8, 3, &mut rng);
        let cfg = small_config(Variant::SkipGram, 8);
        let with = train(&cfg, &v, &c, Some(&store)).unwrap();
        let without = train(&cfg, &v, &c, None).unwrap();
        assert!(with.bits_eq(&without));
    }

    #[test]
    fn learning_rate_schedule() {
        let (v, c) = toy_corpus("a b c d");
        let cfg = small_config(Variant::SkipGram, 2);
        let t = Trainer::new(&cfg, &v, None, c.len()).unwrap();
        assert_eq!(t.learning_rate(0), 0.025);
        assert!((t.learning_rate(2) - 0.0125).abs() < 1e-15);
        assert!((t.learning_rate(4) - 0.025e-4).abs() < 1e-18);
        assert!((t.learning_rate(40) - 0.025e-4).abs() < 1e-18);
    }

    #[test]
    fn store_is_not_mutated_by_training() {
        let text = "the cat sat on the mat\nthe dog sat on the log\n".repeat(20);
        let (v, c) = toy_corpus(&text);
        let mut rng = derive(3, Stream::Init);
        let store = grounded_store(v.len(), 8, 4, &mut rng);
        let before = store.checksum();
        let (_, stats) = train_with_stats(&small_config(Variant::MmB, 8), &v, &c, Some(&store)).unwrap();
        assert!(stats.visual_steps > 0);
        assert_eq!(store.checksum(), before);
    }
}
