//! Experiment configuration: built-in defaults, then the JSON file, then
//! `--set` overrides, resolved into one [`ExperimentConfig`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use codemix_core::augment::AugmentConfig;
use codemix_core::corpus::{LangTag, LanguagePair, TagMapping};
use codemix_core::textnorm::{load_stopwords, EmojiMap, NormConfig, Step, StopwordMode};
use codemix_core::{EncoderKind, ModelSpec, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

/// Hyper-parameter preset the `model` and `train` sections start from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Full,
    Tiny,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub external: Option<PathBuf>,
    pub tag_mapping: Option<PathBuf>,
    pub src_embeddings: Option<PathBuf>,
    pub tgt_embeddings: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub transliteration: Option<PathBuf>,
    pub emoji_map: Option<PathBuf>,
    pub stopwords: BTreeMap<LangTag, PathBuf>,
}

impl Paths {
    fn all_mut(&mut self) -> Vec<(String, &mut PathBuf)> {
        let mut out: Vec<(String, &mut PathBuf)> = Vec::new();
        let named = [
            ("train", &mut self.train),
            ("validation", &mut self.validation),
            ("test", &mut self.test),
            ("external", &mut self.external),
            ("tag_mapping", &mut self.tag_mapping),
            ("src_embeddings", &mut self.src_embeddings),
            ("tgt_embeddings", &mut self.tgt_embeddings),
            ("lexicon", &mut self.lexicon),
            ("transliteration", &mut self.transliteration),
            ("emoji_map", &mut self.emoji_map),
        ];
        for (name, p) in named {
            if let Some(p) = p.as_mut() {
                out.push((format!("paths.{name}"), p));
            }
        }
        for (tag, p) in self.stopwords.iter_mut() {
            out.push((format!("paths.stopwords.{}", tag.as_str()), p));
        }
        out
    }
}

/// Serializable subset of [`NormConfig`]; the emoji map and stopword lists
/// come from `paths`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormSettings {
    pub steps: Vec<Step>,
    pub stopword_mode: StopwordMode,
    pub punct_keep: String,
    pub punct_drop: String,
}

impl Default for NormSettings {
    fn default() -> Self {
        let d = NormConfig::default();
        NormSettings {
            steps: d.steps,
            stopword_mode: d.stopword_mode,
            punct_keep: d.punct_keep.into_iter().collect(),
            punct_drop: d.punct_drop.into_iter().collect(),
        }
    }
}

/// Used only when no validation file is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        SplitSettings { validation_fraction: 0.15, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignSettings {
    /// Romanize source words before lookup (Devanagari Hindi vectors).
    pub romanize: bool,
    pub center: bool,
    pub normalize: bool,
    /// Read at most this many vectors from each embedding file.
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    /// Random initialization.
    #[default]
    None,
    /// The table written by `align`.
    Aligned,
    /// `paths.tgt_embeddings` as is.
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingInputs {
    /// Train on the output of `augment` instead of `preprocess`.
    pub augmented: bool,
    pub embeddings: EmbeddingSource,
    pub min_count: usize,
}

impl Default for TrainingInputs {
    fn default() -> Self {
        TrainingInputs { augmented: false, embeddings: EmbeddingSource::None, min_count: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub language_pair: LanguagePair,
    pub output_dir: PathBuf,
    pub preset: Preset,
    pub paths: Paths,
    pub split: SplitSettings,
    pub norm: NormSettings,
    pub align: AlignSettings,
    pub augment: AugmentConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub inputs: TrainingInputs,
}

impl ExperimentConfig {
    pub fn defaults(encoder: EncoderKind, preset: Preset) -> Self {
        let model = match preset {
            Preset::Full => ModelSpec::full(encoder),
            Preset::Tiny => ModelSpec::tiny(encoder),
        };
        ExperimentConfig {
            language_pair: LanguagePair::HiEn,
            output_dir: PathBuf::from("out"),
            preset,
            paths: Paths::default(),
            split: SplitSettings::default(),
            norm: NormSettings::default(),
            align: AlignSettings::default(),
            augment: AugmentConfig::default(),
            model,
            train: TrainConfig::for_encoder(encoder),
            inputs: TrainingInputs::default(),
        }
    }

    /// Every seed that can influence an artifact.
    pub fn seeds(&self) -> BTreeMap<&'static str, u64> {
        BTreeMap::from([
            ("augment.pairing_seed", self.augment.pairing_seed),
            ("split.seed", self.split.seed),
            ("train.seed", self.train.seed),
        ])
    }

    pub fn tag_mapping(&self) -> anyhow::Result<TagMapping> {
        Ok(match &self.paths.tag_mapping {
            Some(p) => TagMapping::load_tsv(p)?,
            None => TagMapping::default_for(self.language_pair),
        })
    }

    pub fn norm_config(&self) -> anyhow::Result<NormConfig> {
        let mut config = NormConfig {
            steps: self.norm.steps.clone(),
            stopword_mode: self.norm.stopword_mode,
            punct_keep: self.norm.punct_keep.chars().collect(),
            punct_drop: self.norm.punct_drop.chars().collect(),
            ..NormConfig::default()
        };
        if let Some(p) = &self.paths.emoji_map {
            config.emoji_map = EmojiMap::load_tsv(p)?;
        }
        for (&tag, p) in &self.paths.stopwords {
            config.stopwords.insert(tag, load_stopwords(p)?);
        }
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate().map_err(|e| ConfigError(format!("model: {e}")))?;
        self.train.validate().map_err(|e| ConfigError(format!("train: {e}")))?;
        let f = self.split.validation_fraction;
        if !(f > 0.0 && f < 1.0) {
            return err(format!("split.validation_fraction must lie strictly between 0 and 1, got {f}"));
        }
        if self.inputs.min_count == 0 {
            return err("inputs.min_count must be at least 1");
        }
        let keep: String = self.norm.punct_keep.chars().filter(|c| self.norm.punct_drop.contains(*c)).collect();
        if !keep.is_empty() {
            return err(format!("norm: characters {keep:?} are both kept and dropped"));
        }
        let mut paths = self.paths.clone();
        for (name, p) in paths.all_mut() {
            if !p.exists() {
                return err(format!("{name}: {} does not exist", p.display()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    /// Canonical JSON of `config`; its hash identifies the experiment.
    pub canonical: String,
}

/// Defaults, then `file`, then each `KEY=VALUE` in `overrides`. Relative
/// paths resolve against the config file's directory, or the working
/// directory without one.
pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Resolved, ConfigError> {
    let mut user = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str::<Value>(&text)
                .map_err(|e| ConfigError(format!("config {} is not valid JSON: {e}", path.display())))?
        }
        None => Value::Object(Map::new()),
    };
    if !user.is_object() {
        return err("config must be a JSON object");
    }
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("override {o:?} is not KEY=VALUE")))?;
        // bare words are strings, so `--set model.encoder=BIGRU` works unquoted
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_path(&mut user, key, value)?;
    }

    let encoder: EncoderKind = pick(&user, &["model", "encoder"])?.unwrap_or(EncoderKind::BilstmConv);
    let preset: Preset = pick(&user, &["preset"])?.unwrap_or_default();
    let mut merged = serde_json::to_value(ExperimentConfig::defaults(encoder, preset)).expect("defaults serialize");
    merge(&mut merged, &user);
    let mut config: ExperimentConfig =
        serde_json::from_value(merged).map_err(|e| ConfigError(format!("invalid config: {e}")))?;

    let resolved_value = serde_json::to_value(&config).expect("config serializes");
    check_known(&user, &resolved_value, "")?;

    let base = match file.and_then(Path::parent) {
        Some(dir) if !dir.as_os_str().is_empty() => dir.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let anchor = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    anchor(&mut config.output_dir);
    for (_, p) in config.paths.all_mut() {
        anchor(p);
    }
    config.validate()?;
    let canonical = serde_json::to_string(&config).expect("config serializes");
    Ok(Resolved { config, canonical })
}

fn pick<T: serde::de::DeserializeOwned>(v: &Value, path: &[&str]) -> Result<Option<T>, ConfigError> {
    let mut cur = v;
    for key in path {
        match cur.get(key) {
            Some(next) => cur = next,
            None => return Ok(None),
        }
    }
    serde_json::from_value(cur.clone())
        .map(Some)
        .map_err(|e| ConfigError(format!("{}: {e}", path.join("."))))
}

fn set_path(root: &mut Value, dotted: &str, value: Value) -> Result<(), ConfigError> {
    let keys: Vec<&str> = dotted.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return err(format!("malformed key {dotted:?}"));
    }
    let mut cur = root;
    for key in &keys[..keys.len() - 1] {
        if cur.is_null() {
            *cur = Value::Object(Map::new());
        }
        let Value::Object(map) = cur else {
            return err(format!("cannot set {dotted:?}: {key:?} is inside a non-object"));
        };
        cur = map.entry(key.to_string()).or_insert(Value::Null);
    }
    if cur.is_null() {
        *cur = Value::Object(Map::new());
    }
    match cur {
        Value::Object(map) => {
            map.insert(keys[keys.len() - 1].to_string(), value);
            Ok(())
        }
        _ => err(format!("cannot set {dotted:?}: parent is not an object")),
    }
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

/// Rejects keys the resolved config silently dropped, which catches typos
/// inside sections whose types accept unknown fields.
fn check_known(user: &Value, resolved: &Value, prefix: &str) -> Result<(), ConfigError> {
    let (Value::Object(u), Value::Object(r)) = (user, resolved) else {
        return Ok(());
    };
    for (k, v) in u {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match r.get(k) {
            Some(rv) => check_known(v, rv, &path)?,
            None => return err(format!("unknown config key {path:?}")),
        }
    }
    Ok(())
}
