//! Zero-shot cross-modal labeling and retrieval.
//!
//! A fraction of the grounded words is held out. Their visual vectors are
//! withheld when the model is retrained; afterwards images are labeled by
//! mapping visual vectors into word space with a cross-validated ridge
//! regression, and images are retrieved by projecting words into visual
//! space (ridge for skip-gram, the embedding itself for variant A, the
//! learned mapping for variant B). Searches always range over the full
//! grounded set.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, norm, Matrix, ZERO_NORM};
use crate::rng::Rng;
use crate::trainer::{EmbeddingModel, Variant};
use crate::visual::VisualStore;

/// Ridge strengths tried during cross-validation unless overridden.
pub const DEFAULT_LAMBDA_GRID: [f64; 5] = [1e-3, 1e-2, 1e-1, 1.0, 10.0];
pub const CV_FOLDS: usize = 5;

/// Vectors tagged with word ids.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVectors {
    dim: usize,
    labels: Vec<u32>,
    data: Vec<f64>,
    norms: Vec<f64>,
}

impl LabeledVectors {
    pub fn new(dim: usize) -> Self {
        LabeledVectors {
            dim,
            labels: Vec::new(),
            data: Vec::new(),
            norms: Vec::new(),
        }
    }

    pub fn push(&mut self, label: u32, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        self.labels.push(label);
        self.data.extend_from_slice(v);
        self.norms.push(norm(v));
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, label: u32) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }

    pub fn get(&self, label: u32) -> Option<&[f64]> {
        self.position(label).map(|i| self.vector(i))
    }
}

/// Held-out split of the grounded words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZeroShotSplit {
    /// Sorted ascending.
    pub train: Vec<u32>,
    /// In random order; consecutive runs of this list form the CV folds.
    pub test: Vec<u32>,
    pub fraction_milli: u32,
    /// Test words moved back to training because they were on the
    /// exclusion list.
    pub excluded: Vec<u32>,
}

impl ZeroShotSplit {
    pub fn fraction(&self) -> f64 {
        f64::from(self.fraction_milli) / 1000.0
    }
}

/// Uniformly random split: `floor(fraction·n)` words go to test, then words
/// on `exclusion` are moved back to train.
pub fn make_split(grounded: &[u32], fraction: f64, exclusion: &[u32], rng: &mut Rng) -> Result<ZeroShotSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(invalid("held-out fraction", "must lie strictly between 0 and 1"));
    }
    let mut words = grounded.to_vec();
    words.sort_unstable();
    words.dedup();
    if words.is_empty() {
        return Err(Error::Empty("grounded word set"));
    }
    words.shuffle(rng);
    let n_test = libm::floor(fraction * words.len() as f64) as usize;
    let (test_part, train_part) = words.split_at(n_test);
    let mut train = train_part.to_vec();
    let mut test = Vec::with_capacity(n_test);
    let mut excluded = Vec::new();
    for &w in test_part {
        if exclusion.contains(&w) {
            excluded.push(w);
            train.push(w);
        } else {
            test.push(w);
        }
    }
    train.sort_unstable();
    Ok(ZeroShotSplit {
        train,
        test,
        fraction_milli: libm::round(fraction * 1000.0) as u32,
        excluded,
    })
}

/// Linear map `y = W·x + b` fitted by ridge regression.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeMap {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub lambda: f64,
}

impl RidgeMap {
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weights.mul_vec(x);
        for (yi, b) in y.iter_mut().zip(&self.bias) {
            *yi += b;
        }
        y
    }
}

/// Fits ridge regression with an unpenalised bias by solving the normal
/// equations of the centred data, `(XcᵀXc + λI)·Wᵀ = XcᵀYc`.
pub fn fit_ridge<X: AsRef<[f64]>, Y: AsRef<[f64]>>(xs: &[X], ys: &[Y], lambda: f64) -> Result<RidgeMap> {
    let n = xs.len();
    if n == 0 {
        return Err(Error::Empty("ridge training set"));
    }
    if ys.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: ys.len() });
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(invalid("ridge lambda", "must be non-negative"));
    }
    let d_in = xs[0].as_ref().len();
    let d_out = ys[0].as_ref().len();
    for (x, y) in xs.iter().zip(ys) {
        if x.as_ref().len() != d_in {
            return Err(Error::DimensionMismatch { expected: d_in, got: x.as_ref().len() });
        }
        if y.as_ref().len() != d_out {
            return Err(Error::DimensionMismatch { expected: d_out, got: y.as_ref().len() });
        }
    }
    let mean = |rows: &mut dyn Iterator<Item = &[f64]>, d: usize| {
        let mut m = vec![0.0; d];
        for r in rows {
            m.iter_mut().zip(r).for_each(|(a, b)| *a += b);
        }
        m.iter_mut().for_each(|a| *a /= n as f64);
        m
    };
    let x_mean = mean(&mut xs.iter().map(AsRef::as_ref), d_in);
    let y_mean = mean(&mut ys.iter().map(AsRef::as_ref), d_out);
    let xc = DMatrix::from_fn(n, d_in, |i, j| xs[i].as_ref()[j] - x_mean[j]);
    let yc = DMatrix::from_fn(n, d_out, |i, j| ys[i].as_ref()[j] - y_mean[j]);
    let mut gram = xc.tr_mul(&xc);
    for i in 0..d_in {
        gram[(i, i)] += lambda;
    }
    let rhs = xc.tr_mul(&yc);
    let solution = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram.full_piv_lu().solve(&rhs).ok_or(Error::Singular)?,
    };
    if solution.iter().any(|x| !x.is_finite()) {
        return Err(Error::Singular);
    }
    // Column-major d_in × d_out is the row-major layout of W (d_out × d_in).
    let weights = Matrix::from_row_major(d_out, d_in, solution.as_slice().to_vec())?;
    let wx = weights.mul_vec(&x_mean);
    let bias = y_mean.iter().zip(&wx).map(|(y, w)| y - w).collect();
    Ok(RidgeMap { weights, bias, lambda })
}

/// Norm of the ridge optimality residual `Xcᵀ(Xc·Wᵀ − Yc) + λ·Wᵀ`.
pub fn ridge_residual<X: AsRef<[f64]>, Y: AsRef<[f64]>>(map: &RidgeMap, xs: &[X], ys: &[Y]) -> f64 {
    let d_in = map.weights.cols();
    let d_out = map.weights.rows();
    let mut grad = vec![0.0; d_in * d_out];
    for (x, y) in xs.iter().zip(ys) {
        let pred = map.predict(x.as_ref());
        for o in 0..d_out {
            let r = pred[o] - y.as_ref()[o];
            for i in 0..d_in {
                grad[i * d_out + o] += x.as_ref()[i] * r;
            }
        }
    }
    for i in 0..d_in {
        for o in 0..d_out {
            grad[i * d_out + o] += map.lambda * map.weights.get(o, i);
        }
    }
    norm(&grad)
}

/// Top-`k` candidate labels by descending cosine to `query`; equal scores
/// are ordered by ascending label.
pub fn nearest_neighbors(query: &[f64], candidates: &LabeledVectors, k: usize) -> Result<Vec<u32>> {
    Ok(nearest_neighbors_scored(query, candidates, k)?
        .into_iter()
        .map(|(l, _)| l)
        .collect())
}

pub fn nearest_neighbors_scored(query: &[f64], candidates: &LabeledVectors, k: usize) -> Result<Vec<(u32, f64)>> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidate set"));
    }
    if query.len() != candidates.dim() {
        return Err(Error::DimensionMismatch {
            expected: candidates.dim(),
            got: query.len(),
        });
    }
    let nq = norm(query);
    if nq < ZERO_NORM {
        return Err(Error::ZeroNorm);
    }
    let mut scored: Vec<(u32, f64)> = (0..candidates.len())
        .map(|i| {
            let nc = candidates.norms[i];
            let c = if nc < ZERO_NORM {
                0.0
            } else {
                dot(query, candidates.vector(i)) / (nq * nc)
            };
            (candidates.labels[i], c)
        })
        .collect();
    let order = |a: &(u32, f64), b: &(u32, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    let k = k.min(scored.len());
    if k == 0 {
        return Ok(Vec::new());
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(order);
    Ok(scored)
}

/// One cross-validation item: a source vector to map and its gold target.
#[derive(Debug, Clone, Copy)]
pub struct CvItem<'a> {
    pub label: u32,
    pub source: &'a [f64],
    pub target: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvPrediction {
    pub label: u32,
    pub fold: usize,
    pub lambda: f64,
    pub prediction: Vec<f64>,
}

/// Contiguous fold boundaries for `n` items: sizes differ by at most one.
pub fn fold_bounds(n: usize) -> [usize; CV_FOLDS + 1] {
    let mut b = [0; CV_FOLDS + 1];
    let (base, extra) = (n / CV_FOLDS, n % CV_FOLDS);
    for f in 0..CV_FOLDS {
        b[f + 1] = b[f] + base + usize::from(f < extra);
    }
    b
}

/// Five-fold rotation over `items`: for each rotation one fold is predicted,
/// the next one (cyclically) picks λ from `lambda_grid` by P@1 against
/// `candidates`, and the remaining three (plus `extra` pairs) train the map.
/// Every item is predicted exactly once; results follow `items` order.
pub fn cv_protocol(
    items: &[CvItem<'_>],
    extra: &[(&[f64], &[f64])],
    candidates: &LabeledVectors,
    lambda_grid: &[f64],
) -> Result<Vec<CvPrediction>> {
    if items.len() < CV_FOLDS {
        return Err(invalid(
            "cross-validation",
            alloc::format!("need at least {CV_FOLDS} test words, got {}", items.len()),
        ));
    }
    if lambda_grid.is_empty() {
        return Err(Error::Empty("lambda grid"));
    }
    let bounds = fold_bounds(items.len());
    let fold_of = |f: usize| &items[bounds[f]..bounds[f + 1]];
    let mut out: Vec<Option<CvPrediction>> = vec![None; items.len()];
    for test_fold in 0..CV_FOLDS {
        let tune_fold = (test_fold + 1) % CV_FOLDS;
        let mut xs: Vec<&[f64]> = extra.iter().map(|p| p.0).collect();
        let mut ys: Vec<&[f64]> = extra.iter().map(|p| p.1).collect();
        for f in (0..CV_FOLDS).filter(|&f| f != test_fold && f != tune_fold) {
            xs.extend(fold_of(f).iter().map(|it| it.source));
            ys.extend(fold_of(f).iter().map(|it| it.target));
        }
        let mut best: Option<(usize, RidgeMap)> = None;
        for &lambda in lambda_grid {
            let Ok(map) = fit_ridge(&xs, &ys, lambda) else { continue };
            let mut hits = 0;
            for it in fold_of(tune_fold) {
                let pred = map.predict(it.source);
                if let Ok(top) = nearest_neighbors(&pred, candidates, 1) {
                    hits += usize::from(top.first() == Some(&it.label));
                }
            }
            if best.as_ref().is_none_or(|(h, _)| hits > *h) {
                best = Some((hits, map));
            }
        }
        let (_, map) = best.ok_or(Error::Singular)?;
        for (offset, it) in fold_of(test_fold).iter().enumerate() {
            out[bounds[test_fold] + offset] = Some(CvPrediction {
                label: it.label,
                fold: test_fold,
                lambda: map.lambda,
                prediction: map.predict(it.source),
            });
        }
    }
    Ok(out.into_iter().map(|p| p.expect("every fold predicted")).collect())
}

/// A ranked answer list for one query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedQuery {
    pub gold: u32,
    pub ranked: Vec<u32>,
}

/// A grounded label with its embedding and visual vector.
type Pair<'a> = (u32, &'a [f64], &'a [f64]);

/// Word and visual spaces over the same grounded labels, plus the learned
/// mapping for variant B.
#[derive(Debug, Clone)]
pub struct ZeroShotSpace {
    pub embeddings: LabeledVectors,
    pub visual: LabeledVectors,
    pub map: Option<Matrix>,
}

impl ZeroShotSpace {
    pub fn new(embeddings: LabeledVectors, visual: LabeledVectors, map: Option<Matrix>) -> Result<Self> {
        if embeddings.labels() != visual.labels() {
            return Err(invalid("zero-shot space", "word and visual sets must list the same labels"));
        }
        Ok(ZeroShotSpace {
            embeddings,
            visual,
            map,
        })
    }

    /// All grounded words of the full (unrestricted) store, embedded by `model`.
    pub fn from_model(model: &EmbeddingModel, store: &VisualStore) -> Result<Self> {
        let mut emb = LabeledVectors::new(model.dim());
        let mut vis = LabeledVectors::new(store.dim());
        for (slot, &w) in store.words().iter().enumerate() {
            if w as usize >= model.vocab_size() {
                return Err(invalid("grounded word", "outside model vocabulary"));
            }
            emb.push(w, model.vector(w))?;
            vis.push(w, store.vector_at(slot))?;
        }
        Self::new(emb, vis, model.map().cloned())
    }

    fn check(&self, strategy: Variant) -> Result<()> {
        match strategy {
            Variant::SkipGram => Ok(()),
            Variant::MmA if self.embeddings.dim() != self.visual.dim() => Err(Error::Config(alloc::format!(
                "variant A strategy needs embedding dim {} == visual dim {}",
                self.embeddings.dim(),
                self.visual.dim()
            ))),
            Variant::MmA => Ok(()),
            Variant::MmB => match &self.map {
                Some(m) if m.rows() == self.visual.dim() && m.cols() == self.embeddings.dim() => Ok(()),
                Some(_) => Err(Error::Config("mapping shape does not match the spaces".into())),
                None => Err(Error::Config("variant B strategy needs the learned mapping".into())),
            },
        }
    }

    fn pairs<'a>(&'a self, words: &[u32]) -> Result<Vec<Pair<'a>>> {
        words
            .iter()
            .map(|&w| {
                let i = self
                    .embeddings
                    .position(w)
                    .ok_or_else(|| invalid("split word", alloc::format!("id {w} missing from the zero-shot space")))?;
                Ok((w, self.embeddings.vector(i), self.visual.vector(i)))
            })
            .collect()
    }
}

/// Labels every test image (visual vector) with a ranked list of words,
/// mapping vision to language with the CV ridge protocol. Only skip-gram
/// adds the training words' pairs to the ridge data.
pub fn zero_shot_label(
    space: &ZeroShotSpace,
    split: &ZeroShotSplit,
    strategy: Variant,
    lambda_grid: &[f64],
    depth: usize,
) -> Result<Vec<RankedQuery>> {
    space.check(strategy)?;
    let test = space.pairs(&split.test)?;
    let items: Vec<CvItem<'_>> = test
        .iter()
        .map(|&(label, emb, vis)| CvItem {
            label,
            source: vis,
            target: emb,
        })
        .collect();
    let extra_pairs = if strategy == Variant::SkipGram {
        space.pairs(&split.train)?
    } else {
        Vec::new()
    };
    let extra: Vec<(&[f64], &[f64])> = extra_pairs.iter().map(|&(_, e, v)| (v, e)).collect();
    let preds = cv_protocol(&items, &extra, &space.embeddings, lambda_grid)?;
    rank_predictions(&preds, &space.embeddings, depth)
}

/// Retrieves a ranked list of images for every test word.
pub fn zero_shot_retrieve(
    space: &ZeroShotSpace,
    split: &ZeroShotSplit,
    strategy: Variant,
    lambda_grid: &[f64],
    depth: usize,
) -> Result<Vec<RankedQuery>> {
    space.check(strategy)?;
    let test = space.pairs(&split.test)?;
    match strategy {
        Variant::SkipGram => {
            let items: Vec<CvItem<'_>> = test
                .iter()
                .map(|&(label, emb, vis)| CvItem {
                    label,
                    source: emb,
                    target: vis,
                })
                .collect();
            let extra_pairs = space.pairs(&split.train)?;
            let extra: Vec<(&[f64], &[f64])> = extra_pairs.iter().map(|&(_, e, v)| (e, v)).collect();
            let preds = cv_protocol(&items, &extra, &space.visual, lambda_grid)?;
            rank_predictions(&preds, &space.visual, depth)
        }
        Variant::MmA => test
            .iter()
            .map(|&(label, emb, _)| rank_one(label, emb, &space.visual, depth))
            .collect(),
        Variant::MmB => {
            let map = space.map.as_ref().expect("checked");
            test.iter()
                .map(|&(label, emb, _)| rank_one(label, &map.mul_vec(emb), &space.visual, depth))
                .collect()
        }
    }
}

fn rank_one(gold: u32, query: &[f64], candidates: &LabeledVectors, depth: usize) -> Result<RankedQuery> {
    Ok(RankedQuery {
        gold,
        ranked: nearest_neighbors(query, candidates, depth)?,
    })
}

fn rank_predictions(preds: &[CvPrediction], candidates: &LabeledVectors, depth: usize) -> Result<Vec<RankedQuery>> {
    preds
        .iter()
        .map(|p| rank_one(p.label, &p.prediction, candidates, depth))
        .collect()
}
