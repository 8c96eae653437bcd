//! Vocabulary construction, frequency subsampling and context windows.

use alloc::borrow::ToOwned;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use hashbrown::HashMap;
use rand::Rng as _;

use crate::error::{invalid, Error, Result};
use crate::rng::Rng;

/// Sentences longer than this are split into several training chunks.
pub const MAX_SENTENCE_LEN: usize = 1000;

/// Word/id map with occurrence counts. Ids are dense and ordered by
/// descending count, ties broken lexicographically.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, u32>,
    total_tokens: u64,
    min_count: u64,
}

impl Vocabulary {
    /// Builds a vocabulary from raw `(word, count)` pairs, keeping words with
    /// `count >= min_count`. Duplicate words are summed.
    pub fn from_counts<I, S>(counts: I, min_count: u64) -> Result<Self>
    where
        I: IntoIterator<Item = (S, u64)>,
        S: AsRef<str>,
    {
        let mut merged: HashMap<String, u64> = HashMap::new();
        let mut seen_any = false;
        for (word, count) in counts {
            seen_any = true;
            *merged.entry_ref(word.as_ref()).or_insert(0) += count;
        }
        if !seen_any {
            return Err(Error::Empty("token stream"));
        }
        Self::finish(merged, min_count)
    }

    fn finish(counts: HashMap<String, u64>, min_count: u64) -> Result<Self> {
        let mut kept: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count && c > 0)
            .collect();
        if kept.is_empty() {
            return Err(Error::Empty("vocabulary after min-count filtering"));
        }
        kept.sort_unstable_by(|a, b| match b.1.cmp(&a.1) {
            Ordering::Equal => a.0.cmp(&b.0),
            o => o,
        });
        let total_tokens = kept.iter().map(|(_, c)| c).sum();
        let mut index = HashMap::with_capacity(kept.len());
        let mut words = Vec::with_capacity(kept.len());
        let mut counts = Vec::with_capacity(kept.len());
        for (id, (w, c)) in kept.into_iter().enumerate() {
            index.insert(w.clone(), id as u32);
            words.push(w);
            counts.push(c);
        }
        Ok(Vocabulary {
            words,
            counts,
            index,
            total_tokens,
            min_count,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts[id as usize]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Sum of the counts of all retained words.
    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    /// Per-word keep probabilities for subsampling threshold `t`.
    pub fn keep_probabilities(&self, t: f64) -> Result<Vec<f64>> {
        let total = self.total_tokens as f64;
        self.counts
            .iter()
            .map(|&c| keep_probability(c as f64 / total, t))
            .collect()
    }
}

/// Counts whitespace-delimited tokens and keeps those seen at least
/// `min_count` times.
pub fn build_vocabulary<I, S>(tokens: I, min_count: u64) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts: HashMap<String, u64> = HashMap::new();
    let mut seen_any = false;
    for tok in tokens {
        seen_any = true;
        let tok = tok.as_ref();
        match counts.get_mut(tok) {
            Some(c) => *c += 1,
            None => {
                counts.insert(tok.to_owned(), 1);
            }
        }
    }
    if !seen_any {
        return Err(Error::Empty("token stream"));
    }
    Vocabulary::finish(counts, min_count)
}

/// Probability of keeping one occurrence of a word with relative frequency
/// `freq` under threshold `t`: `min(1, sqrt(t / freq))`. An infinite `t`
/// disables subsampling.
pub fn keep_probability(freq: f64, t: f64) -> Result<f64> {
    if freq.is_nan() || freq <= 0.0 {
        return Err(invalid("word frequency", "must be positive"));
    }
    if t.is_nan() || t <= 0.0 {
        return Err(invalid("subsample threshold", "must be positive"));
    }
    if freq <= t {
        return Ok(1.0);
    }
    Ok(libm::sqrt(t / freq).min(1.0))
}

/// Whitespace tokenizer with optional lowercasing.
#[derive(Debug, Clone, Copy, Default)]
pub struct Tokenizer {
    pub lowercase: bool,
}

impl Tokenizer {
    pub fn tokens<'a>(&self, line: &'a str) -> impl Iterator<Item = alloc::borrow::Cow<'a, str>> {
        let lowercase = self.lowercase;
        line.split_whitespace().map(move |t| {
            if lowercase && t.chars().any(char::is_uppercase) {
                alloc::borrow::Cow::Owned(t.to_lowercase())
            } else {
                alloc::borrow::Cow::Borrowed(t)
            }
        })
    }
}

/// A corpus mapped through a vocabulary: out-of-vocabulary tokens are
/// dropped and each input line becomes one or more sentences of at most
/// [`MAX_SENTENCE_LEN`] ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    ids: Vec<u32>,
    bounds: Vec<usize>,
}

impl Corpus {
    pub fn new() -> Self {
        Corpus {
            ids: Vec::new(),
            bounds: alloc::vec![0],
        }
    }

    /// Appends one line of already-mapped ids.
    pub fn push_sentence<I: IntoIterator<Item = u32>>(&mut self, ids: I) {
        let start = *self.bounds.last().unwrap();
        for id in ids {
            self.ids.push(id);
            if self.ids.len() - *self.bounds.last().unwrap() == MAX_SENTENCE_LEN {
                self.bounds.push(self.ids.len());
            }
        }
        if self.ids.len() > *self.bounds.last().unwrap() {
            self.bounds.push(self.ids.len());
        }
        debug_assert!(*self.bounds.last().unwrap() >= start);
    }

    /// Tokenizes `lines` and keeps in-vocabulary tokens.
    pub fn encode<'a, I>(lines: I, vocab: &Vocabulary, tokenizer: Tokenizer) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut corpus = Corpus::new();
        for line in lines {
            corpus.push_sentence(tokenizer.tokens(line).filter_map(|t| vocab.id(&t)));
        }
        corpus
    }

    /// Number of in-vocabulary tokens.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn num_sentences(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn sentence(&self, i: usize) -> &[u32] {
        &self.ids[self.bounds[i]..self.bounds[i + 1]]
    }

    pub fn sentences(&self) -> impl Iterator<Item = &[u32]> + '_ {
        self.bounds.windows(2).map(move |b| &self.ids[b[0]..b[1]])
    }

    /// Splits the sentence indices into `n` contiguous ranges holding
    /// roughly equal numbers of tokens.
    pub fn shard_ranges(&self, n: usize) -> Vec<core::ops::Range<usize>> {
        let n = n.max(1);
        let total = self.ids.len();
        let mut ranges = Vec::with_capacity(n);
        let mut start = 0;
        for shard in 1..=n {
            let target = total * shard / n;
            let mut end = start;
            while end < self.num_sentences() && self.bounds[end + 1] <= target {
                end += 1;
            }
            if shard == n {
                end = self.num_sentences();
            }
            ranges.push(start..end);
            start = end;
        }
        ranges
    }
}

/// One target position with its surviving neighbours.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextWindow {
    pub target: u32,
    pub contexts: Vec<u32>,
}

/// Borrowed view of a window: contexts to the left and right of the target.
#[derive(Debug, Clone, Copy)]
pub struct WindowRef<'a> {
    pub target: u32,
    pub left: &'a [u32],
    pub right: &'a [u32],
}

impl WindowRef<'_> {
    pub fn contexts(&self) -> impl Iterator<Item = u32> + '_ {
        self.left.iter().chain(self.right).copied()
    }

    pub fn to_owned(&self) -> ContextWindow {
        ContextWindow {
            target: self.target,
            contexts: self.contexts().collect(),
        }
    }
}

/// Applies the keep test independently to every token of `sentence`,
/// writing survivors to `out`. Words with keep probability 1 consume no
/// randomness.
pub fn subsample_into(sentence: &[u32], keep: &[f64], rng: &mut Rng, out: &mut Vec<u32>) {
    out.clear();
    for &id in sentence {
        let p = keep[id as usize];
        if p >= 1.0 || rng.random::<f64>() < p {
            out.push(id);
        }
    }
}

/// Calls `f` for every window of an already subsampled sentence.
pub fn for_each_window<F>(kept: &[u32], window: usize, mut f: F)
where
    F: FnMut(WindowRef<'_>),
{
    for (pos, &target) in kept.iter().enumerate() {
        let lo = pos.saturating_sub(window);
        let hi = (pos + window + 1).min(kept.len());
        f(WindowRef {
            target,
            left: &kept[lo..pos],
            right: &kept[pos + 1..hi],
        });
    }
}

/// Streams every context window of `corpus`. `keep` holds per-word keep
/// probabilities (see [`Vocabulary::keep_probabilities`]); subsampling
/// happens before windowing, so discarded tokens shrink the windows.
pub fn iter_windows<'a>(
    corpus: &'a Corpus,
    keep: &'a [f64],
    window: usize,
    rng: &'a mut Rng,
) -> impl Iterator<Item = ContextWindow> + 'a {
    let mut buf = Vec::new();
    corpus.sentences().flat_map(move |sentence| {
        subsample_into(sentence, keep, rng, &mut buf);
        let mut out = Vec::with_capacity(buf.len());
        for_each_window(&buf, window, |w| out.push(w.to_owned()));
        out
    })
}
