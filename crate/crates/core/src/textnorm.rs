//! Tweet normalization: lowercasing, mention stripping, emoji verbalization,
//! repeat collapsing, punctuation filtering and stopword removal.
//!
//! Every step maps a word sequence to a word sequence and keeps each word's
//! language tag, so stopword removal can run per language after the other
//! steps have rewritten the text.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{dominant_language, Instance, LangTag, MajorityLang, SentLabel};

const BUNDLED_EMOJI_MAP: &str = include_str!("../data/emoji_map.tsv");

#[derive(Debug, Error)]
pub enum NormError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Table { line: usize, reason: String },
    #[error("unknown normalization step {0:?}")]
    UnknownStep(String),
    #[error("characters {0:?} are both kept and dropped")]
    PunctOverlap(String),
}

pub type Result<T> = std::result::Result<T, NormError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Lowercase,
    StripMentions,
    EmojiToText,
    CollapseRepeats,
    FilterPunct,
    RemoveStopwords,
}

impl Step {
    pub const DEFAULT_ORDER: [Step; 6] = [
        Step::Lowercase,
        Step::StripMentions,
        Step::EmojiToText,
        Step::CollapseRepeats,
        Step::FilterPunct,
        Step::RemoveStopwords,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Step::Lowercase => "lowercase",
            Step::StripMentions => "strip_mentions",
            Step::EmojiToText => "emoji_to_text",
            Step::CollapseRepeats => "collapse_repeats",
            Step::FilterPunct => "filter_punct",
            Step::RemoveStopwords => "remove_stopwords",
        }
    }
}

impl FromStr for Step {
    type Err = NormError;

    fn from_str(s: &str) -> Result<Self> {
        Step::DEFAULT_ORDER
            .into_iter()
            .find(|step| step.name() == s)
            .ok_or_else(|| NormError::UnknownStep(s.to_string()))
    }
}

/// How stopword sets are matched against words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopwordMode {
    /// A word is removed if any language's list contains it.
    #[default]
    Union,
    /// A word is removed only if the list for its own tag contains it.
    ByTag,
}

/// Emoji sequence to descriptive phrase.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmojiMap {
    entries: BTreeMap<String, String>,
    max_key_chars: usize,
}

impl EmojiMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bundled() -> Self {
        Self::parse_tsv(BUNDLED_EMOJI_MAP).expect("bundled emoji map is well formed")
    }

    pub fn load_tsv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| NormError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_tsv(&text)
    }

    /// `emoji<TAB>phrase` per line. Phrases may not contain emoji themselves.
    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut map = EmojiMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let Some((emoji, phrase)) = line.split_once('\t') else {
                return Err(NormError::Table {
                    line: i + 1,
                    reason: format!("expected emoji<TAB>phrase, got {line:?}"),
                });
            };
            map.insert(emoji, phrase).map_err(|reason| NormError::Table { line: i + 1, reason })?;
        }
        Ok(map)
    }

    pub fn insert(&mut self, emoji: &str, phrase: &str) -> std::result::Result<(), String> {
        let key = strip_presentation(emoji);
        if key.is_empty() {
            return Err("empty emoji key".into());
        }
        if phrase.chars().any(is_emoji_char) {
            return Err(format!("phrase {phrase:?} contains emoji"));
        }
        self.max_key_chars = self.max_key_chars.max(key.chars().count());
        self.entries.insert(key, phrase.trim().to_string());
        Ok(())
    }

    pub fn get(&self, emoji: &str) -> Option<&str> {
        self.entries.get(&strip_presentation(emoji)).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn strip_presentation(s: &str) -> String {
    s.chars().filter(|&c| c != '\u{FE0F}').collect()
}

/// Pictographic codepoints treated as emoji.
pub fn is_emoji_char(c: char) -> bool {
    matches!(c as u32,
        0x1F000..=0x1FAFF
        | 0x2600..=0x27BF
        | 0x2300..=0x23FF
        | 0x2B00..=0x2BFF
        | 0x3030 | 0x303D | 0x3297 | 0x3299)
}

/// Joiners, variation selectors and tag characters that only decorate an
/// adjacent emoji.
fn is_emoji_component(c: char) -> bool {
    matches!(c as u32, 0x200D | 0xFE0E | 0xFE0F | 0x20E3 | 0xE0020..=0xE007F)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormConfig {
    pub steps: Vec<Step>,
    pub stopwords: BTreeMap<LangTag, BTreeSet<String>>,
    pub stopword_mode: StopwordMode,
    pub emoji_map: EmojiMap,
    pub punct_keep: BTreeSet<char>,
    pub punct_drop: BTreeSet<char>,
}

impl Default for NormConfig {
    fn default() -> Self {
        NormConfig {
            steps: Step::DEFAULT_ORDER.to_vec(),
            stopwords: BTreeMap::new(),
            stopword_mode: StopwordMode::Union,
            emoji_map: EmojiMap::bundled(),
            punct_keep: ['?', '!', '…'].into_iter().collect(),
            punct_drop: [',', '.'].into_iter().collect(),
        }
    }
}

impl NormConfig {
    pub fn validate(&self) -> Result<()> {
        let overlap: String = self.punct_keep.intersection(&self.punct_drop).collect();
        if !overlap.is_empty() {
            return Err(NormError::PunctOverlap(overlap));
        }
        Ok(())
    }

    pub fn with_steps(mut self, steps: &[Step]) -> Self {
        self.steps = steps.to_vec();
        self
    }

    pub fn with_stopwords(mut self, lang: LangTag, words: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.stopwords
            .entry(lang)
            .or_default()
            .extend(words.into_iter().map(|w| w.into().to_lowercase()));
        self
    }
}

/// Newline-delimited stopword list, lowercased on load.
pub fn load_stopwords(path: &Path) -> Result<BTreeSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|source| NormError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_lowercase)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Word {
    pub text: String,
    pub lang: LangTag,
}

impl Word {
    pub fn new(text: impl Into<String>, lang: LangTag) -> Self {
        Word { text: text.into(), lang }
    }
}

pub fn words_of(inst: &Instance) -> Vec<Word> {
    inst.tokens.iter().map(|t| Word::new(t.surface.clone(), t.lang)).collect()
}

pub fn texts(words: &[Word]) -> Vec<&str> {
    words.iter().map(|w| w.text.as_str()).collect()
}

pub fn lowercase(words: Vec<Word>) -> Vec<Word> {
    words
        .into_iter()
        .map(|w| Word { text: w.text.to_lowercase(), ..w })
        .collect()
}

pub fn strip_mentions(words: Vec<Word>) -> Vec<Word> {
    words.into_iter().filter(|w| !w.text.starts_with('@')).collect()
}

pub fn remove_stopwords(words: Vec<Word>, stopwords: &BTreeMap<LangTag, BTreeSet<String>>, mode: StopwordMode) -> Vec<Word> {
    words
        .into_iter()
        .filter(|w| match mode {
            StopwordMode::Union => !stopwords.values().any(|set| set.contains(&w.text)),
            StopwordMode::ByTag => !stopwords.get(&w.lang).is_some_and(|set| set.contains(&w.text)),
        })
        .collect()
}

/// Replaces each mapped emoji with the words of its phrase. Text around an
/// emoji becomes a separate word. Unmapped emoji are dropped and returned.
pub fn emoji_to_text(words: Vec<Word>, map: &EmojiMap) -> (Vec<Word>, Vec<String>) {
    let mut out = Vec::with_capacity(words.len());
    let mut unmapped = Vec::new();
    for word in words {
        if !word.text.chars().any(|c| is_emoji_char(c) || is_emoji_component(c)) {
            out.push(word);
            continue;
        }
        let chars: Vec<char> = word.text.chars().filter(|&c| c != '\u{FE0F}').collect();
        let mut segment = String::new();
        let flush = |segment: &mut String, out: &mut Vec<Word>| {
            if !segment.is_empty() {
                out.push(Word::new(std::mem::take(segment), word.lang));
            }
        };
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if !is_emoji_char(c) && !is_emoji_component(c) {
                segment.push(c);
                i += 1;
                continue;
            }
            let longest = (1..=map.max_key_chars.min(chars.len() - i)).rev().find_map(|n| {
                let key: String = chars[i..i + n].iter().collect();
                map.entries.get(&key).map(|phrase| (n, phrase))
            });
            match longest {
                Some((n, phrase)) => {
                    flush(&mut segment, &mut out);
                    out.extend(phrase.split_whitespace().map(|p| Word::new(p, word.lang)));
                    i += n;
                }
                None if is_emoji_char(c) => {
                    flush(&mut segment, &mut out);
                    let mut j = i + 1;
                    while j < chars.len() && (is_emoji_component(chars[j]) || is_skin_tone(chars[j])) {
                        j += 1;
                    }
                    let dropped: String = chars[i..j].iter().collect();
                    log::warn!("dropping unmapped emoji {dropped:?}");
                    unmapped.push(dropped);
                    i = j;
                }
                None => i += 1,
            }
        }
        flush(&mut segment, &mut out);
    }
    (out, unmapped)
}

fn is_skin_tone(c: char) -> bool {
    matches!(c as u32, 0x1F3FB..=0x1F3FF)
}

/// Every maximal run of three or more identical characters becomes two.
pub fn collapse_repeats(word: &str) -> String {
    let mut out = String::with_capacity(word.len());
    let mut prev = None;
    let mut run = 0usize;
    for c in word.chars() {
        if Some(c) == prev {
            run += 1;
        } else {
            prev = Some(c);
            run = 1;
        }
        if run <= 2 {
            out.push(c);
        }
    }
    out
}

pub fn collapse_all(words: Vec<Word>) -> Vec<Word> {
    words
        .into_iter()
        .map(|w| Word { text: collapse_repeats(&w.text), ..w })
        .collect()
}

/// Drops tokens made only of `punct_drop` characters. A run of two or more
/// periods is an ellipsis and stays.
pub fn filter_punct(words: Vec<Word>, config: &NormConfig) -> Vec<Word> {
    words
        .into_iter()
        .filter(|w| {
            let is_ellipsis = w.text.chars().count() >= 2 && w.text.chars().all(|c| c == '.');
            is_ellipsis || !w.text.chars().all(|c| config.punct_drop.contains(&c))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedInstance {
    pub id: String,
    pub words: Vec<String>,
    pub label: SentLabel,
    pub lang_majority: MajorityLang,
    /// Set when every word was removed by normalization.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormOutcome {
    pub instance: NormalizedInstance,
    pub unmapped_emoji: Vec<String>,
}

pub fn apply_step(step: Step, words: Vec<Word>, config: &NormConfig, unmapped: &mut Vec<String>) -> Vec<Word> {
    match step {
        Step::Lowercase => lowercase(words),
        Step::StripMentions => strip_mentions(words),
        Step::EmojiToText => {
            let (words, missing) = emoji_to_text(words, &config.emoji_map);
            unmapped.extend(missing);
            words
        }
        Step::CollapseRepeats => collapse_all(words),
        Step::FilterPunct => filter_punct(words, config),
        Step::RemoveStopwords => remove_stopwords(words, &config.stopwords, config.stopword_mode),
    }
}

pub fn run_pipeline_detailed(inst: &Instance, config: &NormConfig) -> NormOutcome {
    let mut unmapped = Vec::new();
    let words = config
        .steps
        .iter()
        .fold(words_of(inst), |words, &step| apply_step(step, words, config, &mut unmapped));
    let words: Vec<String> = words.into_iter().map(|w| w.text).collect();
    NormOutcome {
        instance: NormalizedInstance {
            id: inst.id.clone(),
            flagged: words.is_empty(),
            words,
            label: inst.label,
            lang_majority: dominant_language(inst),
        },
        unmapped_emoji: unmapped,
    }
}

pub fn run_pipeline(inst: &Instance, config: &NormConfig) -> NormalizedInstance {
    run_pipeline_detailed(inst, config).instance
}

pub fn to_jsonl(instances: &[NormalizedInstance]) -> String {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&serde_json::to_string(inst).expect("normalized instance serializes"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl(text: &str) -> std::result::Result<Vec<NormalizedInstance>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}
