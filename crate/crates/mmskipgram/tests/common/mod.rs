//! Synthetic corpora and visual data shared by the integration tests.
#![allow(dead_code)]

use std::fmt::Write as _;

use mmskipgram_core::rng::{derive, Rng, Stream};
use mmskipgram_core::{Corpus, Tokenizer, Vocabulary};
use rand::seq::IndexedRandom;
use rand::Rng as _;

pub fn rng(seed: u64) -> Rng {
    derive(seed, Stream::Worker(1000))
}

pub fn gaussian(rng: &mut Rng) -> f64 {
    // Box-Muller; keeps the tests free of a distributions dependency.
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn gaussian_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| gaussian(rng)).collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        0.0
    } else {
        d / (na * nb)
    }
}

/// Lines of Zipf-distributed tokens `w0 .. w{vocab-1}`.
pub fn zipf_text(vocab: usize, tokens: usize, sentence_len: usize, seed: u64) -> String {
    let mut rng = rng(seed);
    let mut cdf = Vec::with_capacity(vocab);
    let mut acc = 0.0;
    for r in 1..=vocab {
        acc += 1.0 / r as f64;
        cdf.push(acc);
    }
    let mut text = String::with_capacity(tokens * 6);
    for i in 0..tokens {
        let x = rng.random::<f64>() * acc;
        let w = cdf.partition_point(|&c| c < x).min(vocab - 1);
        write!(text, "w{w}").unwrap();
        text.push(if (i + 1) % sentence_len == 0 { '\n' } else { ' ' });
    }
    text
}

pub fn encode(text: &str, min_count: u64) -> (Vocabulary, Corpus) {
    let tok = Tokenizer::default();
    let vocab = mmskipgram_core::build_vocabulary(text.lines().flat_map(|l| tok.tokens(l)), min_count).unwrap();
    let corpus = Corpus::encode(text.lines(), &vocab, tok);
    (vocab, corpus)
}

/// Word families: the members of a family share one pool of context words.
#[derive(Debug, Clone)]
pub struct FamilyShape {
    pub families: usize,
    pub members: usize,
    pub contexts: usize,
    pub sentences: usize,
    pub sentence_len: usize,
    /// Probability that a token is a family member rather than a context.
    pub member_rate: f64,
    /// Context words shared by all families.
    pub shared: usize,
    /// Probability that a context token comes from the shared pool.
    pub shared_rate: f64,
}

#[derive(Debug, Clone)]
pub struct Families {
    pub text: String,
    /// `members[f][i]` is the word `f{f}m{i}`.
    pub members: Vec<Vec<String>>,
}

pub fn family_text(shape: &FamilyShape, seed: u64) -> Families {
    let mut rng = rng(seed);
    let members: Vec<Vec<String>> = (0..shape.families)
        .map(|f| (0..shape.members).map(|i| format!("f{f}m{i}")).collect())
        .collect();
    let contexts: Vec<Vec<String>> = (0..shape.families)
        .map(|f| (0..shape.contexts).map(|i| format!("f{f}c{i}")).collect())
        .collect();
    let shared: Vec<String> = (0..shape.shared).map(|i| format!("s{i}")).collect();
    let mut text = String::new();
    for _ in 0..shape.sentences {
        let f = rng.random_range(0..shape.families);
        for j in 0..shape.sentence_len {
            let pool = if rng.random::<f64>() < shape.member_rate {
                &members[f]
            } else if !shared.is_empty() && rng.random::<f64>() < shape.shared_rate {
                &shared
            } else {
                &contexts[f]
            };
            if j > 0 {
                text.push(' ');
            }
            text.push_str(pool.choose(&mut rng).unwrap());
        }
        text.push('\n');
    }
    Families { text, members }
}

/// Noisy copies of `center`, one per image.
pub fn images(center: &[f64], n: usize, noise: f64, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| center.iter().map(|c| c + noise * gaussian(rng)).collect())
        .collect()
}
