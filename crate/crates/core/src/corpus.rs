//! CONLL-style corpus ingestion for code-mixed tweets.
//!
//! A record is a meta line `meta<TAB>id<TAB>label` followed by one
//! `token<TAB>rawtag` line per token. Records are separated by one or more
//! blank lines.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed meta line: {text:?}")]
    MalformedMeta { line: usize, text: String },
    #[error("line {line}: malformed token line: {text:?}")]
    MalformedToken { line: usize, text: String },
    #[error("line {line}: unknown sentiment label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: unmapped language tag {tag:?}")]
    UnmappedTag { line: usize, tag: String },
    #[error("line {line}: duplicate instance id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: record {id:?} has no tokens")]
    EmptyRecord { line: usize, id: String },
    #[error("line {line}: schema violation: {reason}")]
    Schema { line: usize, reason: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("split fraction {0} must lie strictly between 0 and 1")]
    FractionOutOfRange(f64),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Per-token language annotation after tag mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LangTag {
    L1,
    L2,
    Other,
}

impl LangTag {
    pub const ALL: [LangTag; 3] = [LangTag::L1, LangTag::L2, LangTag::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            LangTag::L1 => "L1",
            LangTag::L2 => "L2",
            LangTag::Other => "OTHER",
        }
    }
}

impl FromStr for LangTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "L1" => Ok(LangTag::L1),
            "L2" => Ok(LangTag::L2),
            "OTHER" => Ok(LangTag::Other),
            _ => Err(format!("unknown language class {s:?}")),
        }
    }
}

/// The two language classes a tweet can be dominated by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MajorityLang {
    L1,
    L2,
}

impl MajorityLang {
    pub fn index(self) -> usize {
        match self {
            MajorityLang::L1 => 0,
            MajorityLang::L2 => 1,
        }
    }
}

/// Sentiment class. The declaration order fixes the class index used by
/// models and metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentLabel {
    Positive,
    Negative,
    Neutral,
}

impl SentLabel {
    pub const ALL: [SentLabel; 3] = [SentLabel::Positive, SentLabel::Negative, SentLabel::Neutral];

    pub fn index(self) -> usize {
        match self {
            SentLabel::Positive => 0,
            SentLabel::Negative => 1,
            SentLabel::Neutral => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SentLabel::Positive => "positive",
            SentLabel::Negative => "negative",
            SentLabel::Neutral => "neutral",
        }
    }
}

impl fmt::Display for SentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SentLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "positive" => Ok(SentLabel::Positive),
            "negative" => Ok(SentLabel::Negative),
            "neutral" => Ok(SentLabel::Neutral),
            _ => Err(format!("unknown sentiment label {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Origin {
    Competition,
    External,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LanguagePair {
    #[serde(rename = "HI_EN")]
    HiEn,
    #[serde(rename = "ES_EN")]
    EsEn,
}

impl FromStr for LanguagePair {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().replace('-', "_").as_str() {
            "HI_EN" => Ok(LanguagePair::HiEn),
            "ES_EN" => Ok(LanguagePair::EsEn),
            _ => Err(format!("unknown language pair {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub lang: LangTag,
}

impl Token {
    pub fn new(surface: impl Into<String>, lang: LangTag) -> Self {
        Token {
            surface: surface.into(),
            lang,
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.surface.is_empty() {
            return Err("token surface is empty".into());
        }
        if self.surface.contains(['\t', '\n', '\r']) {
            return Err(format!("token {:?} contains a tab or newline", self.surface));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub tokens: Vec<Token>,
    pub label: SentLabel,
    pub origin: Origin,
}

impl Instance {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.surface.as_str())
    }
}

/// Maps raw corpus tags (`Eng`, `Hin`, `lang1`, ...) onto [`LangTag`].
///
/// With no fallback, an unmapped tag is a parse error.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TagMapping {
    entries: BTreeMap<String, LangTag>,
    fallback: Option<LangTag>,
}

impl TagMapping {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_entry(mut self, raw: impl Into<String>, tag: LangTag) -> Self {
        self.entries.insert(raw.into(), tag);
        self
    }

    pub fn with_fallback(mut self, tag: LangTag) -> Self {
        self.fallback = Some(tag);
        self
    }

    pub fn default_for(pair: LanguagePair) -> Self {
        let (l1, l2) = match pair {
            LanguagePair::HiEn => ("Eng", "Hin"),
            LanguagePair::EsEn => ("lang1", "lang2"),
        };
        TagMapping::new()
            .with_entry(l1, LangTag::L1)
            .with_entry(l2, LangTag::L2)
            .with_fallback(LangTag::Other)
    }

    pub fn map(&self, raw: &str) -> Option<LangTag> {
        self.entries.get(raw).copied().or(self.fallback)
    }

    /// Two-column TSV `rawtag<TAB>{L1|L2|OTHER}`. A raw tag of `*` sets the
    /// fallback class.
    pub fn load_tsv(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(io_err(path))?;
        let mut mapping = TagMapping::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(io_err(path))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(raw), Some(tag), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(CorpusError::Schema {
                    line: i + 1,
                    reason: format!("expected two tab-separated columns, got {line:?}"),
                });
            };
            let tag: LangTag = tag.parse().map_err(|reason| CorpusError::Schema {
                line: i + 1,
                reason,
            })?;
            if raw == "*" {
                mapping.fallback = Some(tag);
            } else {
                mapping.entries.insert(raw.to_string(), tag);
            }
        }
        Ok(mapping)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub instances: Vec<Instance>,
    pub language_pair: LanguagePair,
    pub tag_mapping: TagMapping,
}

impl Dataset {
    pub fn new(instances: Vec<Instance>, language_pair: LanguagePair) -> Self {
        Dataset {
            instances,
            language_pair,
            tag_mapping: TagMapping::default_for(language_pair),
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Mean number of tokens per instance.
    pub fn mean_len(&self) -> Option<f64> {
        if self.instances.is_empty() {
            return None;
        }
        let total: usize = self.instances.iter().map(Instance::len).sum();
        Some(total as f64 / self.instances.len() as f64)
    }

    pub fn ids(&self) -> HashSet<&str> {
        self.instances.iter().map(|i| i.id.as_str()).collect()
    }

    fn with_instances(&self, instances: Vec<Instance>) -> Dataset {
        Dataset {
            instances,
            language_pair: self.language_pair,
            tag_mapping: self.tag_mapping.clone(),
        }
    }
}

/// Parses a CONLL string. `parse_conll` is the file-backed entry point.
pub fn parse_conll_str(text: &str, tag_mapping: &TagMapping, pair: LanguagePair) -> Result<Dataset> {
    struct Pending {
        id: String,
        label: SentLabel,
        line: usize,
        tokens: Vec<Token>,
    }

    fn finish(p: Pending, seen: &mut HashSet<String>, out: &mut Vec<Instance>) -> Result<()> {
        if p.tokens.is_empty() {
            return Err(CorpusError::EmptyRecord { line: p.line, id: p.id });
        }
        if !seen.insert(p.id.clone()) {
            return Err(CorpusError::DuplicateId { line: p.line, id: p.id });
        }
        out.push(Instance {
            id: p.id,
            tokens: p.tokens,
            label: p.label,
            origin: Origin::Competition,
        });
        Ok(())
    }

    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut pending: Option<Pending> = None;

    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw_line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if let Some(p) = pending.take() {
                finish(p, &mut seen, &mut out)?;
            }
            continue;
        }
        match pending.as_mut() {
            None => {
                let cols: Vec<&str> = line.split('\t').collect();
                if cols.len() != 3 || cols[0] != "meta" || cols[1].is_empty() {
                    return Err(CorpusError::MalformedMeta {
                        line: line_no,
                        text: line.to_string(),
                    });
                }
                let label = cols[2].parse().map_err(|_| CorpusError::UnknownLabel {
                    line: line_no,
                    label: cols[2].to_string(),
                })?;
                pending = Some(Pending {
                    id: cols[1].to_string(),
                    label,
                    line: line_no,
                    tokens: Vec::new(),
                });
            }
            Some(p) => {
                let mut cols = line.split('\t');
                let (Some(surface), Some(raw_tag), None) = (cols.next(), cols.next(), cols.next()) else {
                    return Err(CorpusError::MalformedToken {
                        line: line_no,
                        text: line.to_string(),
                    });
                };
                if surface.is_empty() {
                    return Err(CorpusError::MalformedToken {
                        line: line_no,
                        text: line.to_string(),
                    });
                }
                let lang = tag_mapping.map(raw_tag).ok_or_else(|| CorpusError::UnmappedTag {
                    line: line_no,
                    tag: raw_tag.to_string(),
                })?;
                p.tokens.push(Token::new(surface, lang));
            }
        }
    }
    if let Some(p) = pending.take() {
        finish(p, &mut seen, &mut out)?;
    }
    Ok(Dataset {
        instances: out,
        language_pair: pair,
        tag_mapping: tag_mapping.clone(),
    })
}

pub fn parse_conll(path: &Path, tag_mapping: &TagMapping, pair: LanguagePair) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_conll_str(&text, tag_mapping, pair)
}

/// Majority language over L1/L2 tokens; ties and all-OTHER tweets go to L1.
pub fn dominant_language(inst: &Instance) -> MajorityLang {
    let (mut l1, mut l2) = (0usize, 0usize);
    for t in &inst.tokens {
        match t.lang {
            LangTag::L1 => l1 += 1,
            LangTag::L2 => l2 += 1,
            LangTag::Other => {}
        }
    }
    if l2 > l1 {
        MajorityLang::L2
    } else {
        MajorityLang::L1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LangCount {
    pub total: usize,
    pub unique: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub instances: usize,
    pub labels: BTreeMap<SentLabel, usize>,
    pub words: BTreeMap<LangTag, LangCount>,
    pub mean_len: f64,
    pub min_len: usize,
    pub max_len: usize,
}

impl StatReport {
    pub fn label_count(&self, label: SentLabel) -> usize {
        self.labels.get(&label).copied().unwrap_or(0)
    }
}

pub fn corpus_stats(ds: &Dataset) -> Result<StatReport> {
    if ds.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    let mut labels: BTreeMap<SentLabel, usize> = SentLabel::ALL.iter().map(|&l| (l, 0)).collect();
    let mut totals: HashMap<LangTag, usize> = HashMap::new();
    let mut uniques: HashMap<LangTag, HashSet<&str>> = HashMap::new();
    let (mut min_len, mut max_len, mut sum) = (usize::MAX, 0usize, 0usize);
    for inst in &ds.instances {
        *labels.entry(inst.label).or_default() += 1;
        min_len = min_len.min(inst.len());
        max_len = max_len.max(inst.len());
        sum += inst.len();
        for t in &inst.tokens {
            *totals.entry(t.lang).or_default() += 1;
            uniques.entry(t.lang).or_default().insert(&t.surface);
        }
    }
    let words = LangTag::ALL
        .iter()
        .map(|&tag| {
            (
                tag,
                LangCount {
                    total: totals.get(&tag).copied().unwrap_or(0),
                    unique: uniques.get(&tag).map_or(0, HashSet::len),
                },
            )
        })
        .collect();
    Ok(StatReport {
        instances: ds.len(),
        labels,
        words,
        mean_len: sum as f64 / ds.len() as f64,
        min_len,
        max_len,
    })
}

/// Seeded shuffle then split into `ceil(fraction * N)` and the remainder.
pub fn split_shuffle(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CorpusError::FractionOutOfRange(fraction));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let cut = ((fraction * ds.len() as f64).ceil() as usize).min(ds.len());
    let pick = |idx: &[usize]| idx.iter().map(|&i| ds.instances[i].clone()).collect::<Vec<_>>();
    Ok((ds.with_instances(pick(&order[..cut])), ds.with_instances(pick(&order[cut..]))))
}

pub fn write_jsonl(ds: &Dataset, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    for inst in &ds.instances {
        let line = serde_json::to_string(inst).expect("instance serialization cannot fail");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a dataset written by [`write_jsonl`]. Raw tags are not persisted, so
/// the result carries the pair's default tag mapping.
pub fn read_jsonl(path: &Path, pair: LanguagePair) -> Result<Dataset> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut instances = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |reason: String| CorpusError::Schema { line: i + 1, reason };
        let inst: Instance = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        if inst.tokens.is_empty() {
            return Err(schema(format!("instance {:?} has no tokens", inst.id)));
        }
        for t in &inst.tokens {
            t.validate().map_err(schema)?;
        }
        if !seen.insert(inst.id.clone()) {
            return Err(CorpusError::DuplicateId { line: i + 1, id: inst.id });
        }
        instances.push(inst);
    }
    Ok(Dataset::new(instances, pair))
}
