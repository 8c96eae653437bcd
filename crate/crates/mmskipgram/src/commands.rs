//! Subcommands of the `mmsg` binary.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use mmskipgram_core::eval::{
    concreteness_correlation, eval_similarity, precision_at_k, top_neighbors, Coverage,
};
use mmskipgram_core::rng::{derive, Stream};
use mmskipgram_core::visual::truncate;
use mmskipgram_core::xmodal::{make_split, zero_shot_label, zero_shot_retrieve, DEFAULT_LAMBDA_GRID};
use mmskipgram_core::{
    build_vocabulary, Corpus, EmbeddingModel, LabeledVectors, Tokenizer, TrainingConfig, Variant, VisualStore,
    Vocabulary, WordVectors, ZeroShotSpace, ZeroShotSplit,
};

use crate::error::{Error, Result};
use crate::formats::{self, SplitRole};
use crate::parallel::train_parallel;

/// Cut-offs reported by the zero-shot experiments.
pub const PRECISION_KS: [usize; 5] = [1, 2, 10, 20, 50];

#[derive(Debug, Parser)]
#[command(name = "mmsg", version, about = "Multimodal skip-gram embeddings: training and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train embeddings on a text corpus, optionally grounded in visual vectors.
    Train(TrainArgs),
    /// Spearman correlation against word-similarity benchmarks.
    EvalSim(EvalSimArgs),
    /// Zero-shot image labeling and word-to-image retrieval.
    Zeroshot(ZeroshotArgs),
    /// Nearest neighbours by cosine similarity.
    Nn(NnArgs),
    /// Vector entropy against concreteness ratings.
    Entropy(EntropyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Skipgram,
    Mma,
    Mmb,
}

impl From<ModelKind> for Variant {
    fn from(m: ModelKind) -> Variant {
        match m {
            ModelKind::Skipgram => Variant::SkipGram,
            ModelKind::Mma => Variant::MmA,
            ModelKind::Mmb => Variant::MmB,
        }
    }
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Whitespace-tokenized UTF-8 text; one sentence per line. Repeatable.
    #[arg(long)]
    pub corpus: Vec<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub min_count: u64,
    #[arg(long)]
    pub lowercase: bool,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value_t = ModelKind::Skipgram)]
    pub model: ModelKind,
    #[arg(long, default_value_t = 300)]
    pub size: usize,
    #[arg(long, default_value_t = 5)]
    pub window: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub sample: f64,
    /// Negative visual samples per grounded token [mma: 20, mmb: 5].
    #[arg(long)]
    pub negative_visual: Option<usize>,
    /// Hinge margin [0.5].
    #[arg(long)]
    pub margin: Option<f64>,
    /// L2 strength on the mapping, mmb only [1e-4].
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.025)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

impl ModelArgs {
    pub fn config(&self, min_count: u64) -> TrainingConfig {
        let mut c = TrainingConfig::new(self.model.into());
        c.dim = self.size;
        c.window = self.window;
        c.sample = self.sample;
        c.epochs = self.epochs;
        c.alpha = self.alpha;
        c.threads = self.threads;
        c.seed = self.seed;
        c.min_count = min_count;
        if let Some(k) = self.negative_visual {
            c.negatives = k;
        }
        if let Some(g) = self.margin {
            c.margin = g;
        }
        if let Some(l) = self.l2 {
            c.l2 = l;
        }
        c
    }
}

#[derive(Debug, Args)]
pub struct VisualArgs {
    /// Visual vectors: "N d" header, then "word v1 .. vd" lines. Repeated
    /// words are averaged.
    #[arg(long)]
    pub visual: Option<PathBuf>,
    /// Keep only the first D visual components.
    #[arg(long)]
    pub visual_dim: Option<usize>,
    /// Ground only words seen at least this often.
    #[arg(long, default_value_t = 0)]
    pub ground_min_count: u64,
    /// "word<TAB>count" file for --ground-min-count instead of corpus counts.
    #[arg(long)]
    pub ground_counts: Option<PathBuf>,
    /// Concreteness ratings used to filter grounded words.
    #[arg(long, requires = "ground_min_concreteness")]
    pub concreteness: Option<PathBuf>,
    #[arg(long, requires = "concreteness")]
    pub ground_min_concreteness: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub visual: VisualArgs,
    #[arg(long)]
    pub output: PathBuf,
    /// Write vectors as little-endian f32 instead of text.
    #[arg(long)]
    pub binary: bool,
    /// Where to write the learned mapping (mmb).
    #[arg(long)]
    pub save_map: Option<PathBuf>,
    /// Where to write the vocabulary as "word<TAB>count".
    #[arg(long)]
    pub save_vocab: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalSimArgs {
    #[arg(long)]
    pub vectors: PathBuf,
    #[arg(long)]
    pub binary: bool,
    /// "word1<TAB>word2<TAB>score" file. Repeatable.
    #[arg(long, required = true)]
    pub benchmark: Vec<PathBuf>,
    /// Keep only pairs whose words both have visual vectors.
    #[arg(long, requires = "visual")]
    pub grounded_only: bool,
    #[arg(long)]
    pub visual: Option<PathBuf>,
    /// Lowercase benchmark words.
    #[arg(long)]
    pub lowercase: bool,
}

#[derive(Debug, Args)]
pub struct ZeroshotArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub visual: VisualArgs,
    /// Share of grounded words held out as the test set.
    #[arg(long, default_value_t = 0.25)]
    pub fraction: f64,
    /// Words never placed in the test set, one per line.
    #[arg(long)]
    pub exclude: Option<PathBuf>,
    /// Use this "word<TAB>{train|test}" split instead of drawing one.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub save_split: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Vec<f64>,
    /// Evaluate these vectors instead of retraining.
    #[arg(long, conflicts_with = "corpus")]
    pub vectors: Option<PathBuf>,
    #[arg(long, requires = "vectors")]
    pub binary: bool,
    /// Mapping matrix for the mmb strategy with --vectors.
    #[arg(long, requires = "vectors")]
    pub map: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NnArgs {
    #[arg(long)]
    pub vectors: PathBuf,
    #[arg(long)]
    pub binary: bool,
    #[arg(short = 'k', long, default_value_t = 3)]
    pub top: usize,
    #[arg(required = true)]
    pub words: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EntropyArgs {
    #[arg(long)]
    pub vectors: PathBuf,
    #[arg(long)]
    pub binary: bool,
    #[arg(long)]
    pub concreteness: PathBuf,
    /// Project vectors through this matrix before measuring entropy.
    #[arg(long)]
    pub map: Option<PathBuf>,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a, out),
        Command::EvalSim(a) => cmd_eval_sim(&a, out),
        Command::Zeroshot(a) => cmd_zeroshot(&a, out),
        Command::Nn(a) => cmd_nn(&a, out),
        Command::Entropy(a) => cmd_entropy(&a, out),
    }
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

/// Tokenized corpus with its vocabulary.
pub struct LoadedCorpus {
    pub vocab: Vocabulary,
    pub corpus: Corpus,
}

pub fn load_corpus(args: &CorpusArgs) -> Result<LoadedCorpus> {
    if args.corpus.is_empty() {
        return Err(Error::Usage("--corpus is required".into()));
    }
    let tokenizer = Tokenizer {
        lowercase: args.lowercase,
    };
    let texts = args
        .corpus
        .iter()
        .map(|p| formats::read_to_string(p))
        .collect::<Result<Vec<_>>>()?;
    let lines = || texts.iter().flat_map(|t| t.lines());
    let vocab = build_vocabulary(lines().flat_map(|l| tokenizer.tokens(l)), args.min_count)?;
    let corpus = Corpus::encode(lines(), &vocab, tokenizer);
    info!(
        "corpus: {} tokens in vocabulary, {} word types, {} sentences",
        corpus.len(),
        vocab.len(),
        corpus.num_sentences()
    );
    Ok(LoadedCorpus { vocab, corpus })
}

/// Builds the visual store over `vocab`, applying truncation and the
/// grounding filters. Returns `None` without `--visual`.
pub fn load_store(args: &VisualArgs, vocab: &Vocabulary) -> Result<Option<VisualStore>> {
    let Some(path) = &args.visual else {
        return Ok(None);
    };
    let records = formats::read_visual(path)?;
    let concrete: Option<HashSet<String>> = match (&args.concreteness, args.ground_min_concreteness) {
        (Some(p), Some(min)) => Some(
            formats::read_concreteness(p)?
                .entries
                .into_iter()
                .filter(|(_, c)| *c >= min)
                .map(|(w, _)| w)
                .collect(),
        ),
        _ => None,
    };
    let external: Option<HashMap<String, u64>> = match &args.ground_counts {
        Some(p) => Some(formats::read_counts(p)?.into_iter().collect()),
        None => None,
    };
    let count_of = |word: &str, id: u32| match &external {
        Some(m) => m.get(word).copied().unwrap_or(0),
        None => vocab.count(id),
    };
    let (mut oov, mut filtered) = (0usize, 0usize);
    let mut entries = Vec::new();
    for (word, v) in records {
        let Some(id) = vocab.id(&word) else {
            oov += 1;
            continue;
        };
        if count_of(&word, id) < args.ground_min_count || concrete.as_ref().is_some_and(|c| !c.contains(&word)) {
            filtered += 1;
            continue;
        }
        let v = match args.visual_dim {
            Some(d) => truncate(&v, d)?,
            None => v,
        };
        entries.push((id, v));
    }
    let store = VisualStore::new(vocab.len(), entries)?;
    info!(
        "visual: {} grounded words (dim {}), {} not in vocabulary, {} filtered",
        store.len(),
        store.dim(),
        oov,
        filtered
    );
    Ok(Some(store))
}

fn train_model(
    config: &TrainingConfig,
    data: &LoadedCorpus,
    store: Option<&VisualStore>,
) -> Result<EmbeddingModel> {
    let start = Instant::now();
    let (model, stats) = train_parallel(config, &data.vocab, &data.corpus, store)?;
    let secs = start.elapsed().as_secs_f64();
    info!(
        "trained {} epoch(s) in {:.1}s: {:.0} tokens/s, {} visual steps",
        config.epochs,
        secs,
        stats.tokens as f64 / secs.max(1e-9),
        stats.visual_steps
    );
    Ok(model)
}

fn checked_store(variant: Variant, store: &Option<VisualStore>) -> Result<Option<&VisualStore>> {
    match (variant, store) {
        (Variant::SkipGram, Some(_)) => {
            warn!("--model skipgram ignores --visual");
            Ok(None)
        }
        (Variant::SkipGram, None) => Ok(None),
        (_, None) => Err(Error::Usage("--visual is required for mma and mmb".into())),
        (_, Some(s)) => Ok(Some(s)),
    }
}

pub fn cmd_train(args: &TrainArgs, _out: &mut dyn Write) -> Result<()> {
    let config = args.model.config(args.corpus.min_count);
    if args.save_map.is_some() && config.variant != Variant::MmB {
        return Err(Error::Usage("--save-map only applies to --model mmb".into()));
    }
    if config.variant.is_multimodal() && args.visual.visual.is_none() {
        return Err(Error::Usage("--visual is required for mma and mmb".into()));
    }
    let data = load_corpus(&args.corpus)?;
    let store = load_store(&args.visual, &data.vocab)?;
    let store = checked_store(config.variant, &store)?;
    let model = train_model(&config, &data, store)?;
    let vectors = WordVectors::from_model(&model, &data.vocab)?;
    formats::write_vectors(&args.output, &vectors, args.binary)?;
    if let (Some(path), Some(m)) = (&args.save_map, model.map()) {
        formats::write_matrix(path, m)?;
    }
    if let Some(path) = &args.save_vocab {
        formats::write_vocab(path, &data.vocab)?;
    }
    Ok(())
}

pub fn cmd_eval_sim(args: &EvalSimArgs, out: &mut dyn Write) -> Result<()> {
    let vectors = formats::read_vectors(&args.vectors, args.binary)?;
    let grounded: Option<HashSet<String>> = match (&args.visual, args.grounded_only) {
        (Some(p), true) => Some(formats::read_visual(p)?.into_iter().map(|(w, _)| w).collect()),
        _ => None,
    };
    let benches = args
        .benchmark
        .iter()
        .map(|p| formats::read_benchmark(p, args.lowercase))
        .collect::<Result<Vec<_>>>()?;
    writeln!(out, "benchmark\trho\tcoverage\tscored\ttotal\tmissing").map_err(stdout_err)?;
    for bench in &benches {
        let pred = |w: &str| grounded.as_ref().is_some_and(|g| g.contains(w));
        let coverage = if grounded.is_some() {
            Coverage::Only(&pred)
        } else {
            Coverage::All
        };
        let r = eval_similarity(&vectors, bench, coverage)
            .map_err(|e| Error::Data(format!("{}: {e}", bench.name)))?;
        if !r.missing.is_empty() {
            let shown: Vec<&str> = r.missing.iter().take(10).map(String::as_str).collect();
            warn!(
                "{}: {} words without vectors ({}{})",
                bench.name,
                r.missing.len(),
                shown.join(", "),
                if r.missing.len() > shown.len() { ", ..." } else { "" }
            );
        }
        writeln!(
            out,
            "{}\t{:.4}\t{:.4}\t{}\t{}\t{}",
            bench.name,
            r.rho,
            r.coverage,
            r.scored,
            r.total,
            r.missing.len()
        )
        .map_err(stdout_err)?;
    }
    Ok(())
}

fn write_precision_rows(
    out: &mut dyn Write,
    strategy: ModelKind,
    labeling: &[f64],
    retrieval: &[f64],
) -> Result<()> {
    let name = strategy.to_possible_value().expect("no skipped variants").get_name().to_string();
    let header: Vec<String> = PRECISION_KS.iter().map(|k| format!("P@{k}")).collect();
    writeln!(out, "task\tmodel\t{}", header.join("\t")).map_err(stdout_err)?;
    for (task, row) in [("labeling", labeling), ("retrieval", retrieval)] {
        let cells: Vec<String> = row.iter().map(|p| format!("{p:.1}")).collect();
        writeln!(out, "{task}\t{name}\t{}", cells.join("\t")).map_err(stdout_err)?;
    }
    Ok(())
}

/// Resolves words to labels, warning about unknown ones.
fn resolve_words(words: &[String], lookup: impl Fn(&str) -> Option<u32>, what: &str) -> Vec<u32> {
    let mut unknown = 0usize;
    let ids = words
        .iter()
        .filter_map(|w| {
            let id = lookup(w);
            unknown += usize::from(id.is_none());
            id
        })
        .collect();
    if unknown > 0 {
        warn!("{what}: {unknown} words not found");
    }
    ids
}

fn build_split(
    args: &ZeroshotArgs,
    grounded: &[u32],
    lookup: &dyn Fn(&str) -> Option<u32>,
) -> Result<ZeroShotSplit> {
    let split = if let Some(path) = &args.split {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (word, role) in formats::read_split(path)? {
            let id = lookup(&word)
                .filter(|id| grounded.binary_search(id).is_ok())
                .ok_or_else(|| Error::Data(format!("{}: {word:?} is not a grounded word", path.display())))?;
            match role {
                SplitRole::Train => train.push(id),
                SplitRole::Test => test.push(id),
            }
        }
        train.sort_unstable();
        let n = (train.len() + test.len()).max(1);
        ZeroShotSplit {
            fraction_milli: (1000 * test.len() / n) as u32,
            train,
            test,
            excluded: Vec::new(),
        }
    } else {
        let exclusion = match &args.exclude {
            Some(p) => resolve_words(&formats::read_word_list(p)?, lookup, "exclusion list"),
            None => Vec::new(),
        };
        let mut rng = derive(args.model.seed, Stream::Split);
        make_split(grounded, args.fraction, &exclusion, &mut rng)?
    };
    if split.test.len() < mmskipgram_core::xmodal::CV_FOLDS {
        return Err(Error::Data(format!(
            "too few grounded words for {}-fold cross-validation: {} test words",
            mmskipgram_core::xmodal::CV_FOLDS,
            split.test.len()
        )));
    }
    info!("split: {} train, {} test words", split.train.len(), split.test.len());
    Ok(split)
}

pub fn cmd_zeroshot(args: &ZeroshotArgs, out: &mut dyn Write) -> Result<()> {
    if !(args.fraction > 0.0 && args.fraction < 1.0) {
        return Err(Error::Usage("--fraction must lie strictly between 0 and 1".into()));
    }
    let Some(visual_path) = &args.visual.visual else {
        return Err(Error::Usage("--visual is required".into()));
    };
    let grid: Vec<f64> = if args.lambda_grid.is_empty() {
        DEFAULT_LAMBDA_GRID.to_vec()
    } else {
        args.lambda_grid.clone()
    };
    if grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(Error::Usage("--lambda-grid values must be non-negative".into()));
    }
    let strategy = Variant::from(args.model.model);
    let depth = *PRECISION_KS.iter().max().expect("non-empty");

    let (space, split, words): (ZeroShotSpace, ZeroShotSplit, Vec<String>) = if let Some(vpath) = &args.vectors {
        let vectors = formats::read_vectors(vpath, args.binary)?;
        let map = match (&args.map, strategy) {
            (Some(p), Variant::MmB) => Some(formats::read_matrix(p)?),
            (None, Variant::MmB) => return Err(Error::Usage("--model mmb with --vectors needs --map".into())),
            (Some(_), _) => return Err(Error::Usage("--map only applies to --model mmb".into())),
            (None, _) => None,
        };
        let mut records: Vec<(u32, Vec<f64>)> = Vec::new();
        for (w, v) in formats::read_visual(visual_path)? {
            if let Some(id) = vectors.id(&w) {
                let v = match args.visual.visual_dim {
                    Some(d) => truncate(&v, d)?,
                    None => v,
                };
                records.push((id, v));
            }
        }
        records.sort_by_key(|(id, _)| *id);
        let grounded: Vec<u32> = records.iter().map(|(id, _)| *id).collect();
        let mut emb = LabeledVectors::new(vectors.dim());
        let mut vis = LabeledVectors::new(records.first().map_or(0, |(_, v)| v.len()));
        for (id, v) in &records {
            emb.push(*id, vectors.vector(*id))?;
            vis.push(*id, v)?;
        }
        let split = build_split(args, &grounded, &|w| vectors.id(w))?;
        let space = ZeroShotSpace::new(emb, vis, map)?;
        (space, split, vectors.words().to_vec())
    } else {
        let data = load_corpus(&args.corpus)?;
        let store = load_store(&args.visual, &data.vocab)?.expect("--visual checked");
        let split = build_split(args, store.words(), &|w| data.vocab.id(w))?;
        let config = args.model.config(args.corpus.min_count);
        let model = if strategy.is_multimodal() {
            // Test words keep no visual signal during training.
            let withheld = store.restrict(&split.train)?;
            train_model(&config, &data, Some(&withheld))?
        } else {
            train_model(&config, &data, None)?
        };
        let space = ZeroShotSpace::from_model(&model, &store)?;
        (space, split, data.vocab.words().to_vec())
    };
    if let Some(p) = &args.save_split {
        formats::write_split(p, &split, |id| words[id as usize].clone())?;
    }
    let labeling = zero_shot_label(&space, &split, strategy, &grid, depth)?;
    let retrieval = zero_shot_retrieve(&space, &split, strategy, &grid, depth)?;
    write_precision_rows(
        out,
        args.model.model,
        &precision_at_k(&labeling, &PRECISION_KS)?,
        &precision_at_k(&retrieval, &PRECISION_KS)?,
    )
}

pub fn cmd_nn(args: &NnArgs, out: &mut dyn Write) -> Result<()> {
    let vectors = formats::read_vectors(&args.vectors, args.binary)?;
    let mut unknown = Vec::new();
    for word in &args.words {
        if vectors.id(word).is_none() {
            unknown.push(word.as_str());
            continue;
        }
        let nn = top_neighbors(&vectors, word, args.top)?;
        let cells: Vec<&str> = nn.iter().map(|(w, _)| w.as_str()).collect();
        writeln!(out, "{word}\t{}", cells.join("\t")).map_err(stdout_err)?;
    }
    if !unknown.is_empty() {
        warn!("{} query words not in the vector file: {}", unknown.len(), unknown.join(", "));
    }
    Ok(())
}

pub fn cmd_entropy(args: &EntropyArgs, out: &mut dyn Write) -> Result<()> {
    let vectors = formats::read_vectors(&args.vectors, args.binary)?;
    let table = formats::read_concreteness(&args.concreteness)?;
    let map = args.map.as_deref().map(formats::read_matrix).transpose()?;
    let report = concreteness_correlation(&vectors, &table, map.as_ref())?;
    let missing = table.entries.len() - report.rows.len();
    if missing > 0 {
        warn!("{missing} rated words not in the vector file");
    }
    writeln!(out, "word\tentropy\tconcreteness").map_err(stdout_err)?;
    for r in &report.rows {
        writeln!(out, "{}\t{:.6}\t{}", r.word, r.entropy, r.concreteness).map_err(stdout_err)?;
    }
    writeln!(out, "# spearman\t{:.4}\t{}", report.rho, report.rows.len()).map_err(stdout_err)?;
    Ok(())
}
