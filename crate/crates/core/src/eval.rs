//! Evaluation metrics: rank correlation against human judgments,
//! precision@k, vector entropy and nearest-neighbour inspection.

use alloc::string::String;
use alloc::vec::Vec;

use hashbrown::HashSet;

use crate::embeddings::WordVectors;
use crate::error::{invalid, Error, Result};
use crate::linalg::{cosine, dot, norm, Matrix, ZERO_NORM};
use crate::xmodal::RankedQuery;

/// Shift added on top of `max(0, -min)` before an entropy is taken.
pub const ENTROPY_EPSILON: f64 = 1e-6;

/// Word pairs with gold similarity scores.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSet {
    pub name: String,
    pub pairs: Vec<(String, String, f64)>,
}

impl BenchmarkSet {
    pub fn new(name: impl Into<String>, pairs: Vec<(String, String, f64)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Empty("benchmark pairs"));
        }
        if pairs.iter().any(|p| !p.2.is_finite()) {
            return Err(invalid("benchmark", "non-finite gold score"));
        }
        Ok(BenchmarkSet {
            name: name.into(),
            pairs,
        })
    }
}

/// Human concreteness ratings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConcretenessTable {
    pub entries: Vec<(String, f64)>,
}

/// Ranks starting at 1, with ties sharing their mean rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = alloc::vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// Spearman's ρ: the Pearson correlation of tie-averaged ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(invalid("spearman", "need at least two observations"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(invalid("spearman", "non-finite observation"));
    }
    pearson(&average_ranks(xs), &average_ranks(ys)).ok_or_else(|| invalid("spearman", "zero rank variance"))
}

/// Which benchmark pairs to score.
#[derive(Clone, Copy)]
pub enum Coverage<'a> {
    All,
    /// Keep only pairs whose two words both satisfy the predicate.
    Only(&'a dyn Fn(&str) -> bool),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityReport {
    pub rho: f64,
    /// Retained pairs over all pairs.
    pub coverage: f64,
    pub scored: usize,
    pub total: usize,
    /// Distinct benchmark words without a vector.
    pub missing: Vec<String>,
}

/// Correlates cosine similarities with the gold scores. Pairs with an
/// unknown word are dropped and reported.
pub fn eval_similarity(vectors: &WordVectors, bench: &BenchmarkSet, coverage: Coverage<'_>) -> Result<SimilarityReport> {
    let mut model = Vec::new();
    let mut gold = Vec::new();
    let mut missing: Vec<String> = Vec::new();
    let mut seen: HashSet<&str> = HashSet::new();
    for (a, b, g) in &bench.pairs {
        let (va, vb) = (vectors.get(a), vectors.get(b));
        for (w, v) in [(a, va), (b, vb)] {
            if v.is_none() && seen.insert(w.as_str()) {
                missing.push(w.clone());
            }
        }
        let (Some(va), Some(vb)) = (va, vb) else { continue };
        if let Coverage::Only(keep) = coverage {
            if !(keep(a) && keep(b)) {
                continue;
            }
        }
        model.push(cosine(va, vb));
        gold.push(*g);
    }
    if model.is_empty() {
        return Err(Error::Empty("scored benchmark pairs"));
    }
    Ok(SimilarityReport {
        rho: spearman(&model, &gold)?,
        coverage: model.len() as f64 / bench.pairs.len() as f64,
        scored: model.len(),
        total: bench.pairs.len(),
        missing,
    })
}

/// Percentage of queries whose gold label is among the first `k` ranked,
/// for each `k` in `ks`.
pub fn precision_at_k(queries: &[RankedQuery], ks: &[usize]) -> Result<Vec<f64>> {
    if queries.is_empty() {
        return Err(Error::Empty("ranked queries"));
    }
    let n = queries.len() as f64;
    Ok(ks
        .iter()
        .map(|&k| {
            let hits = queries
                .iter()
                .filter(|q| q.ranked.iter().take(k).any(|&l| l == q.gold))
                .count();
            100.0 * hits as f64 / n
        })
        .collect())
}

/// Shannon entropy (nats) of `u` shifted to be positive and rescaled to sum
/// to one: `x = u + max(0, -min u) + ε`, `p = x / Σx`.
pub fn vector_entropy(u: &[f64]) -> Result<f64> {
    if u.len() < 2 {
        return Err(invalid("entropy", "need at least two components"));
    }
    if u.iter().any(|x| !x.is_finite()) {
        return Err(invalid("entropy", "non-finite component"));
    }
    let min = u.iter().copied().fold(f64::INFINITY, f64::min);
    let shift = (-min).max(0.0) + ENTROPY_EPSILON;
    let total: f64 = u.iter().map(|x| x + shift).sum();
    Ok(-u
        .iter()
        .map(|x| {
            let p = (x + shift) / total;
            if p > 0.0 {
                p * libm::log(p)
            } else {
                0.0
            }
        })
        .sum::<f64>())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyRow {
    pub word: String,
    pub entropy: f64,
    pub concreteness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyReport {
    pub rho: f64,
    pub rows: Vec<EntropyRow>,
}

/// Spearman correlation between vector entropy and concreteness over the
/// words present in both. With `map`, vectors are first projected by it.
pub fn concreteness_correlation(
    vectors: &WordVectors,
    table: &ConcretenessTable,
    map: Option<&Matrix>,
) -> Result<EntropyReport> {
    if let Some(m) = map {
        if m.cols() != vectors.dim() {
            return Err(Error::DimensionMismatch {
                expected: vectors.dim(),
                got: m.cols(),
            });
        }
    }
    let mut rows = Vec::new();
    for (word, c) in &table.entries {
        let Some(v) = vectors.get(word) else { continue };
        let entropy = match map {
            Some(m) => vector_entropy(&m.mul_vec(v))?,
            None => vector_entropy(v)?,
        };
        rows.push(EntropyRow {
            word: word.clone(),
            entropy,
            concreteness: *c,
        });
    }
    if rows.is_empty() {
        return Err(Error::Empty("overlap between vectors and concreteness table"));
    }
    let es: Vec<f64> = rows.iter().map(|r| r.entropy).collect();
    let cs: Vec<f64> = rows.iter().map(|r| r.concreteness).collect();
    Ok(EntropyReport {
        rho: spearman(&es, &cs)?,
        rows,
    })
}

/// The `k` words closest to `word` by cosine, excluding the word itself.
/// Equal scores keep table order.
pub fn top_neighbors(vectors: &WordVectors, word: &str, k: usize) -> Result<Vec<(String, f64)>> {
    let id = vectors.id(word).ok_or_else(|| Error::UnknownWord(word.into()))?;
    let q = vectors.vector(id);
    let nq = norm(q);
    let mut scored: Vec<(u32, f64)> = (0..vectors.len() as u32)
        .filter(|&i| i != id)
        .map(|i| {
            let v = vectors.vector(i);
            let nv = norm(v);
            let c = if nq < ZERO_NORM || nv < ZERO_NORM {
                0.0
            } else {
                dot(q, v) / (nq * nv)
            };
            (i, c)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(i, c)| (vectors.words()[i as usize].clone(), c))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive, Stream};
    use alloc::borrow::ToOwned;
    use alloc::vec;
    use rand::Rng as _;

    #[test]
    fn spearman_extremes() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let ys = [10.0, 20.0, 25.0, 80.0, 81.0];
        assert!((spearman(&xs, &ys).unwrap() - 1.0).abs() < 1e-15);
        let rev: Vec<f64> = ys.iter().rev().copied().collect();
        assert!((spearman(&xs, &rev).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn spearman_with_ties() {
        // ranks x = (1, 2.5, 2.5, 4), y = (1, 3, 2, 4); Pearson on ranks:
        // dx = (-1.5, 0, 0, 1.5), dy = (-1.5, 0.5, -0.5, 1.5)
        // sxy = 4.5, sxx = 4.5, syy = 5 → ρ = 4.5 / sqrt(22.5)
        let rho = spearman(&[1.0, 2.0, 2.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((rho - 4.5 / libm::sqrt(22.5)).abs() < 1e-15);
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 3.0]), vec![3.0, 1.0, 3.0, 3.0]);
    }

    #[test]
    fn spearman_errors() {
        assert!(spearman(&[1.0], &[1.0]).is_err());
        assert!(spearman(&[1.0, 2.0], &[1.0]).is_err());
        assert!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }

    fn table(rows: &[(&str, Vec<f64>)]) -> WordVectors {
        let mut t = WordVectors::new(rows[0].1.len());
        for (w, v) in rows {
            t.push((*w).to_owned(), v).unwrap();
        }
        t
    }

    fn pair(a: &str, b: &str, s: f64) -> (String, String, f64) {
        (a.to_owned(), b.to_owned(), s)
    }

    #[test]
    fn similarity_against_exact_cosines() {
        let mut rng = derive(1, Stream::Init);
        let words = ["a", "b", "c", "d", "e"];
        let vs = table(&words.map(|w| (w, (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())));
        let mut pairs = Vec::new();
        for i in 0..5 {
            for j in i + 1..5 {
                pairs.push(pair(words[i], words[j], cosine(vs.get(words[i]).unwrap(), vs.get(words[j]).unwrap())));
            }
        }
        pairs.push(pair("a", "zzz", 0.3));
        let bench = BenchmarkSet::new("self", pairs).unwrap();
        let r = eval_similarity(&vs, &bench, Coverage::All).unwrap();
        assert!((r.rho - 1.0).abs() < 1e-12);
        assert_eq!((r.scored, r.total), (10, 11));
        assert_eq!(r.missing, vec!["zzz".to_owned()]);
    }

    #[test]
    fn coverage_filter_halves_pairs() {
        let vs = table(&[("a", vec![1.0, 0.0]), ("b", vec![1.0, 1.0]), ("c", vec![0.0, 1.0]), ("d", vec![1.0, 2.0])]);
        let bench = BenchmarkSet::new(
            "half",
            vec![pair("a", "b", 2.0), pair("a", "d", 1.0), pair("b", "c", 3.0), pair("c", "d", 4.0)],
        )
        .unwrap();
        let grounded = |w: &str| w != "c";
        let r = eval_similarity(&vs, &bench, Coverage::Only(&grounded)).unwrap();
        assert_eq!(r.coverage, 0.5);
        assert_eq!(r.scored, 2);
        assert!((r.rho - 1.0).abs() < 1e-12);
        let none = |_: &str| false;
        assert!(eval_similarity(&vs, &bench, Coverage::Only(&none)).is_err());
    }

    #[test]
    fn benchmark_validation() {
        assert!(BenchmarkSet::new("e", vec![]).is_err());
        assert!(BenchmarkSet::new("n", vec![pair("a", "b", f64::NAN)]).is_err());
    }

    #[test]
    fn precision_basics() {
        let q = |g, r: &[u32]| RankedQuery { gold: g, ranked: r.to_vec() };
        let qs = [q(1, &[1, 2, 3]), q(2, &[1, 2, 3]), q(9, &[1, 2, 3]), q(3, &[1, 2, 3])];
        assert_eq!(precision_at_k(&qs, &[1, 2, 3, 50]).unwrap(), vec![25.0, 50.0, 75.0, 75.0]);
        assert_eq!(precision_at_k(&qs[..1], &[1]).unwrap(), vec![100.0]);
        assert!(precision_at_k(&[], &[1]).is_err());
    }

    #[test]
    fn random_rankings_give_chance_precision() {
        let mut rng = derive(3, Stream::Init);
        let v = 20u32;
        let n = 20_000;
        let qs: Vec<RankedQuery> = (0..n)
            .map(|_| {
                let mut r: Vec<u32> = (0..v).collect();
                rand::seq::SliceRandom::shuffle(&mut r[..], &mut rng);
                RankedQuery { gold: rng.random_range(0..v), ranked: r }
            })
            .collect();
        let p1 = precision_at_k(&qs, &[1]).unwrap()[0];
        let p = 1.0 / f64::from(v);
        let sigma = 100.0 * libm::sqrt(p * (1.0 - p) / n as f64);
        assert!((p1 - 100.0 * p).abs() < 4.0 * sigma, "{p1}");
    }

    #[test]
    fn entropy_reference_values() {
        assert!((vector_entropy(&[0.25; 4]).unwrap() - libm::log(4.0)).abs() < 1e-9);
        let mut hot = vec![0.0; 10];
        hot[3] = 1e4;
        assert!(vector_entropy(&hot).unwrap() < 0.01);
        assert!(vector_entropy(&[1.0]).is_err());
        assert!(vector_entropy(&[1.0, f64::NAN]).is_err());
        // all-equal after the shift is the maximum-entropy case
        assert!((vector_entropy(&[-3.0, -3.0]).unwrap() - libm::log(2.0)).abs() < 1e-12);
    }

    #[test]
    fn entropy_matches_direct_recomputation() {
        let mut rng = derive(4, Stream::Init);
        for _ in 0..100 {
            let u: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
            let min = u.iter().copied().fold(f64::INFINITY, f64::min);
            let x: Vec<f64> = u.iter().map(|v| v - min + 1e-6).collect();
            let s: f64 = x.iter().sum();
            let h: f64 = -x.iter().map(|v| (v / s) * libm::log(v / s)).sum::<f64>();
            assert!((vector_entropy(&u).unwrap() - h).abs() < 1e-12);
        }
    }

    #[test]
    fn concreteness_inverse_entropy() {
        let vs = table(&[
            ("a", vec![1.0, 0.0, 0.0]),
            ("b", vec![1.0, 0.5, 0.0]),
            ("c", vec![1.0, 1.0, 0.2]),
            ("d", vec![1.0, 1.0, 1.0]),
        ]);
        let mut t = ConcretenessTable::default();
        for w in ["a", "b", "c", "d", "x"] {
            let e = vs.get(w).map_or(0.0, |v| vector_entropy(v).unwrap());
            t.entries.push((w.to_owned(), -e));
        }
        let r = concreteness_correlation(&vs, &t, None).unwrap();
        assert_eq!(r.rows.len(), 4);
        assert!((r.rho + 1.0).abs() < 1e-12);
        let id = concreteness_correlation(&vs, &t, Some(&Matrix::identity(3))).unwrap();
        assert_eq!(id, r);
        assert!(concreteness_correlation(&vs, &ConcretenessTable::default(), None).is_err());
    }

    #[test]
    fn neighbors() {
        let vs = table(&[("a", vec![1.0, 0.2]), ("b", vec![0.0, 1.0]), ("c", vec![1.0, 0.2]), ("d", vec![0.7, 0.7])]);
        assert_eq!(top_neighbors(&vs, "a", 1).unwrap()[0].0, "c");
        assert_eq!(top_neighbors(&vs, "c", 1).unwrap()[0].0, "a");
        let all: Vec<String> = top_neighbors(&vs, "a", 10).unwrap().into_iter().map(|p| p.0).collect();
        assert_eq!(all, ["c", "d", "b"]);
        assert!(top_neighbors(&vs, "a", 0).unwrap().is_empty());
        assert!(top_neighbors(&vs, "zz", 3).is_err());
    }
}
