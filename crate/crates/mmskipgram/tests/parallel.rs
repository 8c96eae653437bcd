mod common;

use mmskipgram::train_parallel;
use mmskipgram_core::{train, TrainingConfig, Variant, VisualStore};

fn config(variant: Variant, threads: usize) -> TrainingConfig {
    TrainingConfig {
        dim: 10,
        min_count: 1,
        epochs: 2,
        threads,
        ..TrainingConfig::new(variant)
    }
}

fn store(vocab_size: usize, dim: usize) -> VisualStore {
    let mut rng = common::rng(5);
    let entries = (0..8u32).map(|w| (w, common::gaussian_vec(&mut rng, dim))).collect();
    VisualStore::new(vocab_size, entries).unwrap()
}

#[test]
fn one_thread_matches_the_sequential_trainer() {
    let (vocab, corpus) = common::encode(&common::zipf_text(50, 5000, 10, 1), 1);
    let s = store(vocab.len(), 10);
    for variant in [Variant::SkipGram, Variant::MmA, Variant::MmB] {
        let cfg = config(variant, 1);
        let st = variant.is_multimodal().then_some(&s);
        let (model, stats) = train_parallel(&cfg, &vocab, &corpus, st).unwrap();
        assert!(model.bits_eq(&train(&cfg, &vocab, &corpus, st).unwrap()), "{variant:?}");
        assert_eq!(stats.tokens, 2 * corpus.len() as u64);
    }
}

#[test]
fn workers_cover_the_corpus_and_stay_finite() {
    let (vocab, corpus) = common::encode(&common::zipf_text(50, 5000, 10, 2), 1);
    let s = store(vocab.len(), 10);
    for variant in [Variant::SkipGram, Variant::MmA, Variant::MmB] {
        let st = variant.is_multimodal().then_some(&s);
        let (model, stats) = train_parallel(&config(variant, 3), &vocab, &corpus, st).unwrap();
        assert!(model.is_finite());
        assert_eq!(stats.tokens, 2 * corpus.len() as u64);
        assert_eq!(stats.visual_steps > 0, variant.is_multimodal());
        // Training moved the vectors away from their small random init.
        let before = mmskipgram_core::Trainer::new(&config(variant, 3), &vocab, st, corpus.len())
            .unwrap()
            .init_model()
            .unwrap();
        assert!(!model.bits_eq(&before));
    }
}
