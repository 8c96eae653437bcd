//! Text and binary file formats: word2vec vector files, vocabulary dumps,
//! visual feature files, benchmark and concreteness tables, zero-shot splits
//! and mapping matrices.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use mmskipgram_core::visual::aggregate_word_vector;
use mmskipgram_core::eval::{BenchmarkSet, ConcretenessTable};
use mmskipgram_core::{Matrix, Vocabulary, WordVectors, ZeroShotSplit};

use crate::error::{Error, Result};

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-empty lines with their 1-based line numbers. `#` starts a comment
/// line.
fn data_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push((i + 1, t.to_string()));
    }
    Ok(out)
}

fn parse_f64(path: &Path, line: usize, s: &str) -> Result<f64> {
    match s.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        Ok(_) => Err(Error::parse(path, line, format!("non-finite value {s:?}"))),
        Err(_) => Err(Error::parse(path, line, format!("not a number: {s:?}"))),
    }
}

fn parse_header(path: &Path, line: usize, s: &str) -> Result<(usize, usize)> {
    let mut it = s.split_whitespace().map(str::parse::<usize>);
    match (it.next(), it.next(), it.next()) {
        (Some(Ok(a)), Some(Ok(b)), None) => Ok((a, b)),
        _ => Err(Error::parse(path, line, format!("expected a \"count dim\" header, got {s:?}"))),
    }
}

pub fn write_vectors(path: &Path, vectors: &WordVectors, binary: bool) -> Result<()> {
    let mut w = create(path)?;
    write_vectors_to(&mut w, vectors, binary)
        .and_then(|()| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Word2vec layout. Binary records are `word SP f32-LE×dim LF`; text records
/// print each component with the shortest representation that reads back
/// as the same `f32`.
pub fn write_vectors_to<W: Write>(w: &mut W, vectors: &WordVectors, binary: bool) -> io::Result<()> {
    writeln!(w, "{} {}", vectors.len(), vectors.dim())?;
    for (word, v) in vectors.iter() {
        w.write_all(word.as_bytes())?;
        if binary {
            w.write_all(b" ")?;
            for &x in v {
                w.write_all(&(x as f32).to_le_bytes())?;
            }
        } else {
            for &x in v {
                write!(w, " {}", x as f32)?;
            }
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_vectors(path: &Path, binary: bool) -> Result<WordVectors> {
    let mut r = open(path)?;
    if binary {
        read_binary(path, &mut r)
    } else {
        read_text(path, r)
    }
}

fn read_text<R: BufRead>(path: &Path, r: R) -> Result<WordVectors> {
    let mut lines = r.lines().enumerate();
    let (n, dim) = match lines.next() {
        Some((_, line)) => parse_header(path, 1, &line.map_err(|e| Error::io(path, e))?)?,
        None => return Err(Error::parse(path, 1, "empty vector file")),
    };
    let mut out = WordVectors::new(dim);
    let mut buf = Vec::with_capacity(dim);
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let word = fields.next().expect("non-empty line");
        buf.clear();
        for f in fields {
            buf.push(parse_f64(path, i + 1, f)?);
        }
        if buf.len() != dim {
            return Err(Error::parse(path, i + 1, format!("expected {dim} values, got {}", buf.len())));
        }
        out.push(word.to_string(), &buf).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
    }
    if out.len() != n {
        return Err(Error::Data(format!("{}: header lists {n} words, found {}", path.display(), out.len())));
    }
    Ok(out)
}

fn read_binary<R: BufRead>(path: &Path, r: &mut R) -> Result<WordVectors> {
    let io_err = |e| Error::io(path, e);
    let mut header = String::new();
    r.read_line(&mut header).map_err(io_err)?;
    let (n, dim) = parse_header(path, 1, header.trim())?;
    let mut out = WordVectors::new(dim);
    let mut word = Vec::new();
    let mut raw = vec![0u8; 4 * dim];
    let mut buf = vec![0.0f64; dim];
    for rec in 0..n {
        word.clear();
        r.read_until(b' ', &mut word).map_err(io_err)?;
        if word.pop() != Some(b' ') {
            return Err(Error::Data(format!("{}: truncated at record {rec}", path.display())));
        }
        // Writers differ on whether a newline ends each record.
        let start = word.iter().position(|&b| b != b'\n').unwrap_or(word.len());
        let token = std::str::from_utf8(&word[start..])
            .map_err(|_| Error::Data(format!("{}: record {rec} is not UTF-8", path.display())))?;
        r.read_exact(&mut raw).map_err(io_err)?;
        for (x, b) in buf.iter_mut().zip(raw.chunks_exact(4)) {
            *x = f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
        }
        out.push(token.to_string(), &buf)
            .map_err(|e| Error::Data(format!("{}: record {rec}: {e}", path.display())))?;
    }
    Ok(out)
}

pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut w = create(path)?;
    let res = (|| {
        for (word, count) in vocab.words().iter().zip(vocab.counts()) {
            writeln!(w, "{word}\t{count}")?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

/// `word<TAB>count` lines, as written by [`write_vocab`].
pub fn read_counts(path: &Path) -> Result<Vec<(String, u64)>> {
    data_lines(path)?
        .into_iter()
        .map(|(n, line)| {
            let mut f = line.split_whitespace();
            match (f.next(), f.next().map(str::parse::<u64>), f.next()) {
                (Some(w), Some(Ok(c)), None) => Ok((w.to_string(), c)),
                _ => Err(Error::parse(path, n, "expected \"word<TAB>count\"")),
            }
        })
        .collect()
}

/// Reads a visual feature file. Records sharing a word (one per image) are
/// averaged; output keeps first-appearance order.
pub fn read_visual(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let lines = data_lines(path)?;
    let Some(((hline, header), records)) = lines.split_first() else {
        return Err(Error::parse(path, 1, "empty visual file"));
    };
    let (n, dim) = parse_header(path, *hline, header)?;
    if records.len() != n {
        return Err(Error::Data(format!(
            "{}: header lists {n} records, found {}",
            path.display(),
            records.len()
        )));
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<Vec<f64>>> = HashMap::new();
    for (ln, line) in records {
        let mut fields = line.split_whitespace();
        let word = fields.next().expect("non-empty line");
        let v = fields.map(|f| parse_f64(path, *ln, f)).collect::<Result<Vec<_>>>()?;
        if v.len() != dim {
            return Err(Error::parse(path, *ln, format!("expected {dim} values, got {}", v.len())));
        }
        match groups.get_mut(word) {
            Some(g) => g.push(v),
            None => {
                order.push(word.to_string());
                groups.insert(word.to_string(), vec![v]);
            }
        }
    }
    order
        .into_iter()
        .map(|w| {
            let v = aggregate_word_vector(&groups[&w])?;
            Ok((w, v))
        })
        .collect()
}

pub fn write_visual(path: &Path, records: &[(String, Vec<f64>)]) -> Result<()> {
    let dim = records.first().map_or(0, |(_, v)| v.len());
    let mut w = create(path)?;
    let res = (|| {
        writeln!(w, "{} {dim}", records.len())?;
        for (word, v) in records {
            write!(w, "{word}")?;
            for x in v {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

/// `word1 word2 score` rows, tab or space separated. The set is named after
/// the file stem.
pub fn read_benchmark(path: &Path, lowercase: bool) -> Result<BenchmarkSet> {
    let mut pairs = Vec::new();
    for (n, line) in data_lines(path)? {
        let f: Vec<&str> = line.split_whitespace().collect();
        let [a, b, s] = f[..] else {
            return Err(Error::parse(path, n, "expected \"word1<TAB>word2<TAB>score\""));
        };
        let case = |w: &str| if lowercase { w.to_lowercase() } else { w.to_string() };
        pairs.push((case(a), case(b), parse_f64(path, n, s)?));
    }
    let name = path.file_stem().map_or_else(|| "benchmark".into(), |s| s.to_string_lossy().into_owned());
    BenchmarkSet::new(name, pairs).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn read_concreteness(path: &Path) -> Result<ConcretenessTable> {
    let mut entries = Vec::new();
    for (n, line) in data_lines(path)? {
        let f: Vec<&str> = line.split_whitespace().collect();
        let [w, s] = f[..] else {
            return Err(Error::parse(path, n, "expected \"word<TAB>score\""));
        };
        entries.push((w.to_string(), parse_f64(path, n, s)?));
    }
    Ok(ConcretenessTable { entries })
}

/// One word per line.
pub fn read_word_list(path: &Path) -> Result<Vec<String>> {
    Ok(data_lines(path)?.into_iter().map(|(_, l)| l).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitRole {
    Train,
    Test,
}

/// `word<TAB>{train|test}` lines in file order. Test order matters: it fixes
/// the cross-validation folds.
pub fn read_split(path: &Path) -> Result<Vec<(String, SplitRole)>> {
    data_lines(path)?
        .into_iter()
        .map(|(n, line)| {
            let f: Vec<&str> = line.split_whitespace().collect();
            match f[..] {
                [w, "train"] => Ok((w.to_string(), SplitRole::Train)),
                [w, "test"] => Ok((w.to_string(), SplitRole::Test)),
                _ => Err(Error::parse(path, n, "expected \"word<TAB>train\" or \"word<TAB>test\"")),
            }
        })
        .collect()
}

/// Training words first (ascending label), then test words in fold order.
pub fn write_split(path: &Path, split: &ZeroShotSplit, word: impl Fn(u32) -> String) -> Result<()> {
    let mut w = create(path)?;
    let res = (|| {
        for &id in &split.train {
            writeln!(w, "{}\ttrain", word(id))?;
        }
        for &id in &split.test {
            writeln!(w, "{}\ttest", word(id))?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

/// Header `rows cols`, then one row per line. Values use the shortest
/// representation that reads back bit-identically.
pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    let mut w = create(path)?;
    let res = (|| {
        writeln!(w, "{} {}", m.rows(), m.cols())?;
        for r in 0..m.rows() {
            let row: Vec<String> = m.row(r).iter().map(|x| x.to_string()).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let lines = data_lines(path)?;
    let Some(((hline, header), rows)) = lines.split_first() else {
        return Err(Error::parse(path, 1, "empty matrix file"));
    };
    let (nr, nc) = parse_header(path, *hline, header)?;
    if rows.len() != nr {
        return Err(Error::Data(format!("{}: header lists {nr} rows, found {}", path.display(), rows.len())));
    }
    let mut data = Vec::with_capacity(nr * nc);
    for (ln, line) in rows {
        let before = data.len();
        for f in line.split_whitespace() {
            data.push(parse_f64(path, *ln, f)?);
        }
        if data.len() - before != nc {
            return Err(Error::parse(path, *ln, format!("expected {nc} values, got {}", data.len() - before)));
        }
    }
    Ok(Matrix::from_row_major(nr, nc, data)?)
}
