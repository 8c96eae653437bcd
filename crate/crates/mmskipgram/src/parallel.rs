//! Lock-free multi-threaded training over corpus shards.

use std::cell::UnsafeCell;
use std::sync::atomic::AtomicU64;
use std::thread;

use mmskipgram_core::rng::{derive, Stream};
use mmskipgram_core::trainer::{train_with_stats, TrainStats, Workspace};
use mmskipgram_core::{Corpus, EmbeddingModel, Error as CoreError, Trainer, TrainingConfig, VisualStore, Vocabulary};

use crate::error::Result;

/// Shared model that every worker mutates without synchronisation.
///
/// Workers race on `f64` slots and may lose each other's updates; the
/// buffers themselves are never resized while shared.
struct Hogwild<T>(UnsafeCell<T>);

// SAFETY: see `get`. Only plain `f64` buffers are written concurrently.
unsafe impl<T: Send> Sync for Hogwild<T> {}

impl<T> Hogwild<T> {
    /// # Safety
    /// Callers must not change the shape of anything reachable from `T`
    /// while other references are live.
    #[allow(clippy::mut_from_ref)]
    unsafe fn get(&self) -> &mut T {
        &mut *self.0.get()
    }

    fn into_inner(self) -> T {
        self.0.into_inner()
    }
}

/// Trains with `config.threads` workers. One thread delegates to the
/// deterministic single-threaded trainer.
pub fn train_parallel(
    config: &TrainingConfig,
    vocab: &Vocabulary,
    corpus: &Corpus,
    store: Option<&VisualStore>,
) -> Result<(EmbeddingModel, TrainStats)> {
    if config.threads <= 1 {
        return Ok(train_with_stats(config, vocab, corpus, store)?);
    }
    let trainer = Trainer::new(config, vocab, store, corpus.len())?;
    let shared = Hogwild(UnsafeCell::new(trainer.init_model()?));
    let shards = corpus.shard_ranges(config.threads);
    let mut rngs: Vec<_> = (0..shards.len() as u32)
        .map(|w| derive(config.seed, Stream::Worker(w)))
        .collect();
    let mut workspaces: Vec<Workspace> = shards.iter().map(|_| Workspace::new()).collect();
    let progress = AtomicU64::new(0);
    let mut stats = TrainStats::default();
    for epoch in 0..config.epochs {
        let results: Vec<_> = thread::scope(|s| {
            let handles: Vec<_> = shards
                .iter()
                .zip(rngs.iter_mut())
                .zip(workspaces.iter_mut())
                .map(|((range, rng), ws)| {
                    let (trainer, shared, progress) = (&trainer, &shared, &progress);
                    s.spawn(move || {
                        // SAFETY: training only writes vector components.
                        let model = unsafe { shared.get() };
                        trainer.train_sentences(model, range.clone().map(|i| corpus.sentence(i)), rng, progress, ws)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        for r in results {
            stats.merge(&r?);
        }
        // SAFETY: all workers have joined.
        if !unsafe { shared.get() }.is_finite() {
            return Err(CoreError::NonFinite { epoch }.into());
        }
        log::info!("epoch {} done: {} tokens", epoch + 1, stats.tokens);
    }
    Ok((shared.into_inner(), stats))
}
