//! Word vectors, vocabulary romanization and supervised orthogonal alignment
//! of one embedding space onto another.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected {expected} components, found {found}")]
    DimensionMismatch { line: usize, expected: usize, found: usize },
    #[error("line {line}: component {text:?} is not a finite number")]
    NonNumeric { line: usize, text: String },
    #[error("line {line}: {reason}")]
    Table { line: usize, reason: String },
    #[error("need at least {needed} usable lexicon pairs, found {found}")]
    TooFewPairs { needed: usize, found: usize },
    #[error("dimension mismatch: {0} vs {1}")]
    Dim(usize, usize),
    #[error("cosine of a zero vector is undefined")]
    ZeroVector,
    #[error("k = {k} outside 1..={vocab}")]
    KOutOfRange { k: usize, vocab: usize },
    #[error("empty embedding table")]
    Empty,
}

pub type Result<T> = std::result::Result<T, EmbedError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EmbedError + '_ {
    move |source| EmbedError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Vocabulary plus a `V x d` matrix of vectors; row `i` belongs to `words[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    words: Vec<String>,
    index: HashMap<String, usize>,
    matrix: Array2<f64>,
}

impl EmbeddingTable {
    /// Builds a table, keeping the first occurrence of a repeated word.
    pub fn from_rows(rows: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.1.len());
        let mut words = Vec::with_capacity(rows.len());
        let mut index = HashMap::with_capacity(rows.len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, (word, vec)) in rows.into_iter().enumerate() {
            if vec.len() != dim {
                return Err(EmbedError::DimensionMismatch { line: i + 1, expected: dim, found: vec.len() });
            }
            if index.contains_key(&word) {
                log::warn!("duplicate vector for {word:?}; keeping the first");
                continue;
            }
            index.insert(word.clone(), words.len());
            words.push(word);
            data.extend(vec);
        }
        let matrix = Array2::from_shape_vec((words.len(), dim), data).expect("row lengths checked");
        Ok(EmbeddingTable { words, index, matrix })
    }

    pub fn from_matrix(words: Vec<String>, matrix: Array2<f64>) -> Result<Self> {
        if words.len() != matrix.nrows() {
            return Err(EmbedError::Dim(words.len(), matrix.nrows()));
        }
        let rows = words
            .into_iter()
            .zip(matrix.rows())
            .map(|(w, r)| (w, r.to_vec()))
            .collect();
        let mut table = Self::from_rows(rows)?;
        if table.matrix.ncols() == 0 {
            table.matrix = Array2::zeros((table.words.len(), matrix.ncols()));
        }
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn get(&self, word: &str) -> Option<ArrayView1<'_, f64>> {
        self.index_of(word).map(|i| self.matrix.row(i))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(io_err(path))?;
        let mut w = BufWriter::new(f);
        writeln!(w, "{} {}", self.len(), self.dim()).map_err(io_err(path))?;
        for (word, row) in self.words.iter().zip(self.matrix.rows()) {
            write!(w, "{word}").map_err(io_err(path))?;
            for v in row {
                write!(w, " {v}").map_err(io_err(path))?;
            }
            writeln!(w).map_err(io_err(path))?;
        }
        w.flush().map_err(io_err(path))
    }
}

/// Text vectors: optional `V d` header, then `word v1 ... vd` per line.
pub fn load_vectors(path: &Path, limit: Option<usize>) -> Result<EmbeddingTable> {
    let f = File::open(path).map_err(io_err(path))?;
    parse_vectors(BufReader::new(f), limit, path)
}

fn parse_vectors(reader: impl BufRead, limit: Option<usize>, path: &Path) -> Result<EmbeddingTable> {
    let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
    let mut dim: Option<usize> = None;
    let mut seen = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        if limit.is_some_and(|l| rows.len() >= l) {
            break;
        }
        let line = line.map_err(io_err(path))?;
        let line_no = i + 1;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let comps: Vec<&str> = parts.collect();
        if i == 0 && comps.len() == 1 && word.parse::<usize>().is_ok() {
            if let Ok(d) = comps[0].parse::<usize>() {
                dim = Some(d);
                continue;
            }
        }
        let expected = *dim.get_or_insert(comps.len());
        if comps.len() != expected {
            return Err(EmbedError::DimensionMismatch { line: line_no, expected, found: comps.len() });
        }
        let vec = comps
            .iter()
            .map(|c| match c.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(EmbedError::NonNumeric { line: line_no, text: c.to_string() }),
            })
            .collect::<Result<Vec<f64>>>()?;
        if seen.insert(word.to_string(), line_no).is_some() {
            log::warn!("line {line_no}: duplicate vector for {word:?}; keeping the first");
            continue;
        }
        rows.push((word.to_string(), vec));
    }
    let dim = dim.unwrap_or(0);
    let mut table = EmbeddingTable::from_rows(rows)?;
    if table.is_empty() {
        table.matrix = Array2::zeros((0, dim));
    }
    Ok(table)
}

/// Script-to-Latin mapping keyed by codepoint sequences; matching is greedy
/// longest-first.
#[derive(Debug, Clone, Default)]
pub struct Transliterator {
    entries: HashMap<String, String>,
    max_key_chars: usize,
}

impl Transliterator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, from: &str, to: &str) {
        self.max_key_chars = self.max_key_chars.max(from.chars().count());
        self.entries.insert(from.to_string(), to.to_string());
    }

    /// `codepoint(s)<TAB>latin`. The source column is either literal text or
    /// space-separated `U+XXXX` codes.
    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut t = Transliterator::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let table_err = |reason: String| EmbedError::Table { line: i + 1, reason };
            let (src, latin) = line
                .split_once('\t')
                .ok_or_else(|| table_err(format!("expected two columns, got {line:?}")))?;
            let src = if src.starts_with("U+") {
                src.split_whitespace()
                    .map(|code| {
                        u32::from_str_radix(code.trim_start_matches("U+"), 16)
                            .ok()
                            .and_then(char::from_u32)
                            .ok_or_else(|| table_err(format!("bad codepoint {code:?}")))
                    })
                    .collect::<Result<String>>()?
            } else {
                src.to_string()
            };
            if src.is_empty() {
                return Err(table_err("empty source sequence".into()));
            }
            t.insert(&src, latin);
        }
        Ok(t)
    }

    pub fn load_tsv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse_tsv(&text)
    }

    /// Small Devanagari table used by tests and demos.
    pub fn devanagari_demo() -> Self {
        Self::parse_tsv(include_str!("../data/devanagari_demo.tsv")).expect("bundled table is well formed")
    }

    /// Returns the romanized word and the number of characters without a
    /// mapping (those pass through unchanged).
    pub fn romanize(&self, word: &str) -> (String, usize) {
        let chars: Vec<char> = word.chars().collect();
        let mut out = String::with_capacity(word.len());
        let mut unmapped = 0;
        let mut i = 0;
        while i < chars.len() {
            let hit = (1..=self.max_key_chars.min(chars.len() - i)).rev().find_map(|n| {
                let key: String = chars[i..i + n].iter().collect();
                self.entries.get(&key).map(|latin| (n, latin))
            });
            match hit {
                Some((n, latin)) => {
                    out.push_str(latin);
                    i += n;
                }
                None => {
                    if !chars[i].is_ascii() {
                        unmapped += 1;
                    }
                    out.push(chars[i]);
                    i += 1;
                }
            }
        }
        (out, unmapped)
    }
}

#[derive(Debug, Clone)]
pub struct Romanized {
    pub table: EmbeddingTable,
    /// `(dropped word, surviving word)` for each romanization collision.
    pub collisions: Vec<(String, String)>,
    pub unmapped_chars: usize,
}

pub fn romanize_vocab(table: &EmbeddingTable, translit: &Transliterator) -> Romanized {
    let mut words = Vec::with_capacity(table.len());
    let mut keep_rows = Vec::with_capacity(table.len());
    let mut first: HashMap<String, usize> = HashMap::new();
    let mut collisions = Vec::new();
    let mut unmapped_chars = 0;
    for (row, word) in table.words.iter().enumerate() {
        let (latin, missed) = translit.romanize(word);
        unmapped_chars += missed;
        if let Some(&prev) = first.get(&latin) {
            log::warn!("{word:?} romanizes to {latin:?}, already taken by {:?}", table.words[prev]);
            collisions.push((word.clone(), table.words[prev].clone()));
            continue;
        }
        first.insert(latin.clone(), row);
        words.push(latin);
        keep_rows.push(row);
    }
    let matrix = table.matrix.select(Axis(0), &keep_rows);
    let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    Romanized {
        table: EmbeddingTable { words, index, matrix },
        collisions,
        unmapped_chars,
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BilingualLexicon {
    pub pairs: Vec<(String, String)>,
}

impl BilingualLexicon {
    pub fn new(pairs: Vec<(String, String)>) -> Self {
        BilingualLexicon { pairs }
    }

    /// `src<TAB>tgt` per line; whitespace-separated pairs are also accepted
    /// since common dictionaries use both.
    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split(|c: char| c == '\t' || c.is_whitespace()).filter(|s| !s.is_empty());
            match (cols.next(), cols.next(), cols.next()) {
                (Some(s), Some(t), None) => pairs.push((s.to_string(), t.to_string())),
                _ => {
                    return Err(EmbedError::Table {
                        line: i + 1,
                        reason: format!("expected src<TAB>tgt, got {line:?}"),
                    })
                }
            }
        }
        Ok(BilingualLexicon { pairs })
    }

    pub fn load_tsv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse_tsv(&text)
    }

    pub fn romanize_sources(&self, translit: &Transliterator) -> Self {
        BilingualLexicon {
            pairs: self
                .pairs
                .iter()
                .map(|(s, t)| (translit.romanize(s).0, t.clone()))
                .collect(),
        }
    }

    /// Pairs whose words exist in both tables, as row indices.
    pub fn usable_rows(&self, src: &EmbeddingTable, tgt: &EmbeddingTable) -> Vec<(usize, usize)> {
        self.pairs
            .iter()
            .filter_map(|(s, t)| Some((src.index_of(s)?, tgt.index_of(t)?)))
            .collect()
    }
}

/// Orthogonal `d x d` matrix taking source vectors into the target space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentMap {
    pub w: Array2<f64>,
}

impl AlignmentMap {
    pub fn identity(d: usize) -> Self {
        AlignmentMap { w: Array2::eye(d) }
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    /// `||W W^T - I||_F`.
    pub fn orthogonality_error(&self) -> f64 {
        let d = self.dim();
        let gram = self.w.dot(&self.w.t()) - Array2::<f64>::eye(d);
        gram.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Subtract each side's mean pair vector before fitting.
    pub center: bool,
    /// Scale pair vectors to unit length before fitting.
    pub normalize: bool,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub map: AlignmentMap,
    pub pairs_used: usize,
    pub singular_values: Vec<f64>,
    /// Set when the cross-covariance is numerically rank deficient.
    pub rank_deficient: bool,
}

pub fn fit_procrustes(src: &EmbeddingTable, tgt: &EmbeddingTable, lex: &BilingualLexicon) -> Result<AlignmentMap> {
    fit_procrustes_with(src, tgt, lex, FitOptions::default()).map(|o| o.map)
}

/// Solves `min ||W X - Y||_F` over orthogonal `W`, with the pairs' source
/// vectors as the columns of `X` and target vectors as the columns of `Y`:
/// `W = U V^T` for `U S V^T = svd(Y X^T)`.
pub fn fit_procrustes_with(
    src: &EmbeddingTable,
    tgt: &EmbeddingTable,
    lex: &BilingualLexicon,
    opts: FitOptions,
) -> Result<FitOutcome> {
    if src.dim() != tgt.dim() {
        return Err(EmbedError::Dim(src.dim(), tgt.dim()));
    }
    let d = src.dim();
    let rows = lex.usable_rows(src, tgt);
    if rows.len() < d || d == 0 {
        return Err(EmbedError::TooFewPairs { needed: d.max(1), found: rows.len() });
    }
    let n = rows.len();
    let gather = |table: &EmbeddingTable, pick: &dyn Fn(&(usize, usize)) -> usize| {
        let mut m = DMatrix::<f64>::zeros(d, n);
        for (col, pair) in rows.iter().enumerate() {
            let row = table.matrix.row(pick(pair));
            let norm = if opts.normalize { row.dot(&row).sqrt() } else { 1.0 };
            let norm = if norm > 0.0 { norm } else { 1.0 };
            for k in 0..d {
                m[(k, col)] = row[k] / norm;
            }
        }
        if opts.center {
            for k in 0..d {
                let mean = m.row(k).mean();
                m.row_mut(k).add_scalar_mut(-mean);
            }
        }
        m
    };
    let x = gather(src, &|p| p.0);
    let y = gather(tgt, &|p| p.1);
    let cross = &y * x.transpose();
    let svd = cross.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let w = u * v_t;
    let singular_values: Vec<f64> = svd.singular_values.iter().copied().collect();
    let top = singular_values.iter().copied().fold(0.0, f64::max);
    let rank_deficient = singular_values.iter().any(|&s| s <= top * 1e-10);
    if rank_deficient {
        log::warn!("pair matrix is rank deficient; the alignment is not unique");
    }
    let w = Array2::from_shape_fn((d, d), |(i, j)| w[(i, j)]);
    Ok(FitOutcome {
        map: AlignmentMap { w },
        pairs_used: n,
        singular_values,
        rank_deficient,
    })
}

/// Replaces each row `v` with `W v`.
pub fn apply_map(map: &AlignmentMap, table: &EmbeddingTable) -> Result<EmbeddingTable> {
    if map.dim() != table.dim() {
        return Err(EmbedError::Dim(map.dim(), table.dim()));
    }
    Ok(EmbeddingTable {
        words: table.words.clone(),
        index: table.index.clone(),
        matrix: table.matrix.dot(&map.w.t()),
    })
}

pub fn cosine(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<f64> {
    if u.len() != v.len() {
        return Err(EmbedError::Dim(u.len(), v.len()));
    }
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    Ok((u.dot(&v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Top-`k` words by cosine; ties keep vocabulary order. Zero rows score 0.
pub fn nearest_neighbors(table: &EmbeddingTable, query: ArrayView1<f64>, k: usize) -> Result<Vec<(String, f64)>> {
    if k == 0 || k > table.len() {
        return Err(EmbedError::KOutOfRange { k, vocab: table.len() });
    }
    let qn = query.dot(&query).sqrt();
    if qn == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    if query.len() != table.dim() {
        return Err(EmbedError::Dim(query.len(), table.dim()));
    }
    let mut scored: Vec<(usize, f64)> = table
        .matrix
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let rn = row.dot(&row).sqrt();
            let s = if rn == 0.0 { 0.0 } else { row.dot(&query) / (rn * qn) };
            (i, s)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(i, s)| (table.words[i].clone(), s))
        .collect())
}

/// Fraction of lexicon pairs whose mapped source vector has its gold target
/// as nearest neighbor. Pairs missing from either table are skipped.
pub fn precision_at_1(aligned_src: &EmbeddingTable, tgt: &EmbeddingTable, lex: &BilingualLexicon) -> Result<f64> {
    let rows = lex.usable_rows(aligned_src, tgt);
    if rows.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for &(s, t) in &rows {
        let top = nearest_neighbors(tgt, aligned_src.matrix.row(s), 1)?;
        if top[0].0 == tgt.words[t] {
            hits += 1;
        }
    }
    Ok(hits as f64 / rows.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum OovPolicy {
    #[default]
    Zero,
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lookup {
    pub vector: Array1<f64>,
    pub oov: bool,
}

pub fn lookup(table: &EmbeddingTable, word: &str, policy: OovPolicy) -> Lookup {
    match table.get(word) {
        Some(row) => Lookup { vector: row.to_owned(), oov: false },
        None => {
            let vector = match policy {
                OovPolicy::Zero => Array1::zeros(table.dim()),
                OovPolicy::Mean => table
                    .matrix
                    .mean_axis(Axis(0))
                    .unwrap_or_else(|| Array1::zeros(table.dim())),
            };
            Lookup { vector, oov: true }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn table(rows: &[(&str, &[f64])]) -> EmbeddingTable {
        EmbeddingTable::from_rows(rows.iter().map(|(w, v)| (w.to_string(), v.to_vec())).collect()).unwrap()
    }

    fn parse(text: &str, limit: Option<usize>) -> Result<EmbeddingTable> {
        parse_vectors(text.as_bytes(), limit, Path::new("<mem>"))
    }

    #[test]
    fn loads_with_and_without_header() {
        let t = parse("2 3\na 1 2 3\nb 4 5 6\n", None).unwrap();
        assert_eq!((t.len(), t.dim()), (2, 3));
        assert_eq!(t.get("b").unwrap().to_vec(), vec![4.0, 5.0, 6.0]);
        let t = parse("a 1 2 3\nb 4 5 6\n", None).unwrap();
        assert_eq!((t.len(), t.dim()), (2, 3));
    }

    #[test]
    fn load_errors_and_limit() {
        assert!(matches!(
            parse("2 3\na 1 2 3\nb 4 5\n", None),
            Err(EmbedError::DimensionMismatch { line: 3, expected: 3, found: 2 })
        ));
        assert!(matches!(parse("a 1 x 3\n", None), Err(EmbedError::NonNumeric { line: 1, .. })));
        let big: String = (0..2000).map(|i| format!("w{i} {i} 0.5\n")).collect();
        assert_eq!(parse(&big, Some(1000)).unwrap().len(), 1000);
        let dup = parse("a 1 1\na 2 2\nb 3 3\n", None).unwrap();
        assert_eq!(dup.len(), 2);
        assert_eq!(dup.get("a").unwrap().to_vec(), vec![1.0, 1.0]);
    }

    #[test]
    fn write_then_load_is_exact() {
        let t = table(&[("x", &[0.1, -1e-17]), ("y", &[1.0 / 3.0, 2.5])]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.txt");
        t.write(&p).unwrap();
        assert_eq!(load_vectors(&p, None).unwrap(), t);
    }

    #[test]
    fn romanization() {
        let demo = Transliterator::devanagari_demo();
        let t = table(&[("अच्छा", &[1.0, 2.0])]);
        let r = romanize_vocab(&t, &demo);
        assert_eq!(r.table.words(), &["achcha".to_string()]);
        assert_eq!(r.table.get("achcha").unwrap().to_vec(), vec![1.0, 2.0]);
        assert!(r.collisions.is_empty());

        let latin = table(&[("good", &[1.0]), ("bad", &[2.0])]);
        let r = romanize_vocab(&latin, &demo);
        assert_eq!(r.table, latin);
        assert_eq!(r.unmapped_chars, 0);

        let mut tr = Transliterator::new();
        tr.insert("क", "ka");
        tr.insert("का", "ka");
        let clash = table(&[("क", &[1.0]), ("का", &[2.0]), ("x", &[3.0])]);
        let r = romanize_vocab(&clash, &tr);
        assert_eq!(r.table.len(), 2);
        assert_eq!(r.table.get("ka").unwrap().to_vec(), vec![1.0]);
        assert_eq!(r.collisions, vec![("का".to_string(), "क".to_string())]);
    }

    #[test]
    fn transliteration_table_codepoints() {
        let t = Transliterator::parse_tsv("U+0915\tk\nU+0915 U+093E\tkaa\n").unwrap();
        assert_eq!(t.romanize("का"), ("kaa".to_string(), 0));
        assert_eq!(t.romanize("कz"), ("kz".to_string(), 0));
        assert_eq!(t.romanize("ख"), ("ख".to_string(), 1));
        assert!(Transliterator::parse_tsv("U+ZZZZ\tx\n").is_err());
    }

    fn lexicon(words: &[&str]) -> BilingualLexicon {
        BilingualLexicon::new(words.iter().map(|w| (w.to_string(), w.to_string())).collect())
    }

    #[test]
    fn procrustes_identity_and_rotation() {
        let src = table(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0]), ("c", &[1.0, 1.0])]);
        let lex = lexicon(&["a", "b", "c"]);
        let w = fit_procrustes(&src, &src, &lex).unwrap();
        assert_abs_diff_eq!(w.w, Array2::eye(2), epsilon = 1e-10);

        let r = array![[0.0, -1.0], [1.0, 0.0]];
        let tgt = EmbeddingTable::from_matrix(src.words().to_vec(), src.matrix().dot(&r.t())).unwrap();
        let w = fit_procrustes(&src, &tgt, &lex).unwrap();
        assert_abs_diff_eq!(w.w, r, epsilon = 1e-10);
        assert!(w.orthogonality_error() < 1e-6);
    }

    #[test]
    fn procrustes_needs_enough_pairs() {
        let src = table(&[("a", &[1.0, 0.0, 0.0]), ("b", &[0.0, 1.0, 0.0])]);
        let err = fit_procrustes(&src, &src, &lexicon(&["a", "b", "zzz"])).unwrap_err();
        assert!(matches!(err, EmbedError::TooFewPairs { needed: 3, found: 2 }));
    }

    #[test]
    fn rank_deficient_pairs_warn_but_fit() {
        let src = table(&[("a", &[1.0, 0.0]), ("b", &[2.0, 0.0])]);
        let out = fit_procrustes_with(&src, &src, &lexicon(&["a", "b"]), FitOptions::default()).unwrap();
        assert!(out.rank_deficient);
        assert!(out.map.orthogonality_error() < 1e-6);
    }

    #[test]
    fn apply_map_preserves_norms() {
        let t = table(&[("a", &[3.0, 4.0]), ("b", &[-1.0, 2.0])]);
        let same = apply_map(&AlignmentMap::identity(2), &t).unwrap();
        assert_eq!(same, t);
        let theta: f64 = 0.3;
        let map = AlignmentMap { w: array![[theta.cos(), -theta.sin()], [theta.sin(), theta.cos()]] };
        let out = apply_map(&map, &t).unwrap();
        for (a, b) in t.matrix().rows().into_iter().zip(out.matrix().rows()) {
            assert_abs_diff_eq!(a.dot(&a).sqrt(), b.dot(&b).sqrt(), epsilon = 1e-12);
        }
        assert!(apply_map(&AlignmentMap::identity(3), &t).is_err());
    }

    #[test]
    fn cosine_values() {
        let v = array![0.3, -2.0];
        assert_abs_diff_eq!(cosine(v.view(), v.view()).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cosine(array![1.0, 0.0].view(), array![0.0, 5.0].view()).unwrap(), 0.0);
        assert_abs_diff_eq!(
            cosine(array![1.0, 0.0].view(), array![1.0, 1.0].view()).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-15
        );
        assert!(matches!(cosine(array![0.0, 0.0].view(), v.view()), Err(EmbedError::ZeroVector)));
    }

    #[test]
    fn neighbors_rank_and_ties() {
        let t = table(&[("a", &[1.0, 0.0]), ("b", &[2.0, 0.0]), ("c", &[0.0, 1.0]), ("d", &[1.0, 1.0])]);
        let q = t.get("c").unwrap();
        assert_eq!(nearest_neighbors(&t, q, 1).unwrap()[0].0, "c");
        let all = nearest_neighbors(&t, array![1.0, 0.0].view(), 4).unwrap();
        let order: Vec<&str> = all.iter().map(|(w, _)| w.as_str()).collect();
        assert_eq!(order, vec!["a", "b", "d", "c"]);
        assert!(nearest_neighbors(&t, q, 5).is_err());
        assert!(nearest_neighbors(&t, q, 0).is_err());
    }

    #[test]
    fn lookup_policies() {
        let t = table(&[("a", &[1.0, 2.0]), ("b", &[3.0, -2.0])]);
        assert_eq!(lookup(&t, "a", OovPolicy::Zero), Lookup { vector: array![1.0, 2.0], oov: false });
        assert_eq!(lookup(&t, "zz", OovPolicy::Zero), Lookup { vector: array![0.0, 0.0], oov: true });
        // mean of rows: ((1+3)/2, (2-2)/2)
        assert_eq!(lookup(&t, "zz", OovPolicy::Mean), Lookup { vector: array![2.0, 0.0], oov: true });
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn random_table(n: usize, d: usize, seed: u64) -> EmbeddingTable {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
            EmbeddingTable::from_matrix((0..n).map(|i| format!("w{i}")).collect(), m).unwrap()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn fits_are_orthogonal_and_isometric(seed in any::<u64>(), d in 2usize..8) {
                let src = random_table(3 * d, d, seed);
                let tgt = random_table(3 * d, d, seed.wrapping_add(1));
                let names: Vec<String> = src.words().to_vec();
                let lex = BilingualLexicon::new(names.iter().map(|w| (w.clone(), w.clone())).collect());
                let w = fit_procrustes(&src, &tgt, &lex).unwrap();
                prop_assert!(w.orthogonality_error() <= 1e-6);

                let mapped = apply_map(&w, &src).unwrap();
                for i in 0..src.len() {
                    for j in 0..src.len() {
                        let before = cosine(src.matrix().row(i), src.matrix().row(j)).unwrap();
                        let after = cosine(mapped.matrix().row(i), mapped.matrix().row(j)).unwrap();
                        prop_assert!((before - after).abs() < 1e-10);
                    }
                }

                let mut shuffled = lex.clone();
                shuffled.pairs.reverse();
                shuffled.pairs.rotate_left(seed as usize % lex.pairs.len());
                let w2 = fit_procrustes(&src, &tgt, &shuffled).unwrap();
                prop_assert!((&w.w - &w2.w).iter().all(|x| x.abs() < 1e-9));
            }

            #[test]
            fn self_alignment_is_identity(seed in any::<u64>()) {
                let src = random_table(40, 6, seed);
                let lex = BilingualLexicon::new(src.words().iter().take(20).map(|w| (w.clone(), w.clone())).collect());
                let w = fit_procrustes(&src, &src, &lex).unwrap();
                let err = (&w.w - &Array2::<f64>::eye(6)).iter().map(|x| x * x).sum::<f64>().sqrt();
                prop_assert!(err < 1e-8);
            }
        }
    }
}
