//! Encoder specifications, parameter layout, the forward pass for a single
//! tweet, and checkpoints.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::s;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{self, Dense, GruWeights, LstmWeights, Mode};
use super::params::{glorot, uniform, ParamSet, Tensor};
use super::tape::{Mat, Tape, Var};
use super::{NnError, Result};
use crate::corpus::SentLabel;
use crate::embed::EmbeddingTable;
use crate::textnorm::NormalizedInstance;

pub const CHECKPOINT_FORMAT: &str = "codemix-checkpoint-v1";
const RECURRENT_INIT: f64 = 0.08;
const EMBED_INIT: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EncoderKind {
    BilstmConv,
    Bigru,
    BilstmCapsule,
    BigruCapsule,
    HanAttn,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 5] = [
        EncoderKind::BilstmConv,
        EncoderKind::Bigru,
        EncoderKind::BilstmCapsule,
        EncoderKind::BigruCapsule,
        EncoderKind::HanAttn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::BilstmConv => "BILSTM_CONV",
            EncoderKind::Bigru => "BIGRU",
            EncoderKind::BilstmCapsule => "BILSTM_CAPSULE",
            EncoderKind::BigruCapsule => "BIGRU_CAPSULE",
            EncoderKind::HanAttn => "HAN_ATTN",
        }
    }

    pub fn is_capsule(self) -> bool {
        matches!(self, EncoderKind::BilstmCapsule | EncoderKind::BigruCapsule)
    }

    fn uses_lstm(self) -> bool {
        matches!(self, EncoderKind::BilstmConv | EncoderKind::BilstmCapsule)
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EncoderKind {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        let canon = s.trim().to_ascii_uppercase().replace('-', "_");
        EncoderKind::ALL
            .into_iter()
            .find(|k| k.name() == canon)
            .ok_or_else(|| NnError::Spec(format!("unknown encoder {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharSpec {
    pub char_dim: usize,
    pub char_hidden: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MtlSpec {
    pub lambda: f64,
}

impl Default for MtlSpec {
    fn default() -> Self {
        MtlSpec { lambda: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub encoder: EncoderKind,
    pub embed_dim: usize,
    pub hidden: usize,
    pub spatial_dropout: f64,
    pub dropout: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_capsules: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capsule_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub routing_iters: Option<usize>,
    pub conv_filters: usize,
    pub conv_kernel: usize,
    pub attention_dim: usize,
    #[serde(default)]
    pub char_bilstm: Option<CharSpec>,
    #[serde(default)]
    pub mtl: Option<MtlSpec>,
    #[serde(default = "default_true")]
    pub train_embeddings: bool,
}

fn default_true() -> bool {
    true
}

impl ModelSpec {
    /// Full-size hyper-parameters for each encoder, with 300-d embeddings.
    pub fn full(encoder: EncoderKind) -> Self {
        let capsule = encoder.is_capsule();
        ModelSpec {
            encoder,
            embed_dim: 300,
            hidden: 64,
            spatial_dropout: if capsule { 0.2 } else { 0.35 },
            dropout: if capsule { 0.12 } else { 0.15 },
            num_capsules: capsule.then_some(10),
            capsule_dim: capsule.then_some(16),
            routing_iters: capsule.then_some(3),
            conv_filters: 64,
            conv_kernel: 3,
            attention_dim: 64,
            char_bilstm: None,
            mtl: None,
            train_embeddings: true,
        }
    }

    /// Small dimensions for gradient checks and fast tests.
    pub fn tiny(encoder: EncoderKind) -> Self {
        let capsule = encoder.is_capsule();
        ModelSpec {
            encoder,
            embed_dim: 4,
            hidden: 3,
            spatial_dropout: 0.1,
            dropout: 0.1,
            num_capsules: capsule.then_some(3),
            capsule_dim: capsule.then_some(4),
            routing_iters: capsule.then_some(3),
            conv_filters: 4,
            conv_kernel: 2,
            attention_dim: 3,
            char_bilstm: None,
            mtl: None,
            train_embeddings: true,
        }
    }

    pub fn with_chars(mut self, char_dim: usize, char_hidden: usize) -> Self {
        self.char_bilstm = Some(CharSpec { char_dim, char_hidden });
        self
    }

    pub fn with_mtl(mut self, lambda: f64) -> Self {
        self.mtl = Some(MtlSpec { lambda });
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NnError::Spec(msg));
        for (name, rate) in [("spatial_dropout", self.spatial_dropout), ("dropout", self.dropout)] {
            if !(0.0..1.0).contains(&rate) {
                return bad(format!("{name} must be in [0, 1), got {rate}"));
            }
        }
        let mut counts = vec![
            ("embed_dim", self.embed_dim),
            ("hidden", self.hidden),
            ("conv_filters", self.conv_filters),
            ("conv_kernel", self.conv_kernel),
            ("attention_dim", self.attention_dim),
        ];
        if let Some(c) = self.char_bilstm {
            counts.push(("char_dim", c.char_dim));
            counts.push(("char_hidden", c.char_hidden));
        }
        let caps = [
            ("num_capsules", self.num_capsules),
            ("capsule_dim", self.capsule_dim),
            ("routing_iters", self.routing_iters),
        ];
        for (name, v) in caps {
            match (self.encoder.is_capsule(), v) {
                (true, Some(n)) => counts.push((name, n)),
                (true, None) => return bad(format!("{name} is required for {}", self.encoder)),
                (false, Some(_)) => return bad(format!("{name} is only valid for capsule encoders")),
                (false, None) => {}
            }
        }
        if let Some((name, _)) = counts.iter().find(|(_, n)| *n == 0) {
            return bad(format!("{name} must be at least 1"));
        }
        if let Some(m) = self.mtl {
            if !(m.lambda.is_finite() && m.lambda >= 0.0) {
                return bad(format!("mtl lambda must be finite and >= 0, got {}", m.lambda));
            }
        }
        Ok(())
    }

    /// Width of a word vector fed to the encoder.
    pub fn input_dim(&self) -> usize {
        self.embed_dim + self.char_bilstm.map_or(0, |c| 2 * c.char_hidden)
    }

    /// Width of the pooled feature fed to the heads.
    pub fn feature_dim(&self) -> usize {
        match self.encoder {
            EncoderKind::BilstmConv => self.conv_filters,
            EncoderKind::Bigru | EncoderKind::HanAttn => 2 * self.hidden,
            EncoderKind::BilstmCapsule | EncoderKind::BigruCapsule => {
                self.num_capsules.unwrap_or(0) * self.capsule_dim.unwrap_or(0)
            }
        }
    }
}

pub const UNK: &str = "<unk>";

/// Token inventory with `<unk>` at index 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::from_tokens(Vec::<String>::new())
    }
}

impl Vocab {
    /// Keeps the first occurrence of each token; `<unk>` is always index 0.
    pub fn from_tokens<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        let mut v = Vocab { tokens: vec![UNK.to_string()], index: HashMap::new() };
        v.index.insert(UNK.to_string(), 0);
        for t in tokens {
            let t = t.into();
            if !v.index.contains_key(&t) {
                v.index.insert(t.clone(), v.tokens.len());
                v.tokens.push(t);
            }
        }
        v
    }

    /// Tokens seen at least `min_count` times, most frequent first, ties
    /// broken lexicographically.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in tokens {
            *counts.entry(t).or_default() += 1;
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count.max(1)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Vocab::from_tokens(ranked.into_iter().map(|(t, _)| t))
    }

    pub fn words(instances: &[NormalizedInstance], min_count: usize) -> Self {
        Vocab::build(instances.iter().flat_map(|i| i.words.iter().map(String::as_str)), min_count)
    }

    pub fn chars(instances: &[NormalizedInstance]) -> Self {
        let chars: Vec<String> = instances
            .iter()
            .flat_map(|i| i.words.iter().flat_map(|w| w.chars().map(String::from)))
            .collect();
        Vocab::build(chars.iter().map(String::as_str), 1)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }
}

/// A tweet as model indices. Empty tweets carry a single `<unk>` word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedInstance {
    pub id: String,
    pub word_ids: Vec<usize>,
    pub char_ids: Vec<Vec<usize>>,
    pub label: usize,
    pub lang: usize,
}

impl EncodedInstance {
    pub fn encode(inst: &NormalizedInstance, vocab: &Vocab, chars: &Vocab) -> Self {
        let (word_ids, char_ids) = if inst.words.is_empty() {
            (vec![0], vec![vec![0]])
        } else {
            (
                inst.words.iter().map(|w| vocab.get(w)).collect(),
                inst.words
                    .iter()
                    .map(|w| {
                        let ids: Vec<usize> = w.chars().map(|c| chars.get(c.encode_utf8(&mut [0; 4]))).collect();
                        if ids.is_empty() { vec![0] } else { ids }
                    })
                    .collect(),
            )
        };
        EncodedInstance {
            id: inst.id.clone(),
            word_ids,
            char_ids,
            label: inst.label.index(),
            lang: inst.lang_majority.index(),
        }
    }

    pub fn len(&self) -> usize {
        self.word_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_ids.is_empty()
    }
}

fn lstm_init(ps: &mut ParamSet, rng: &mut ChaCha8Rng, prefix: &str, input: usize, hidden: usize) {
    ps.insert(&format!("{prefix}.w_x"), uniform(rng, input, 4 * hidden, RECURRENT_INIT), true);
    ps.insert(&format!("{prefix}.w_h"), uniform(rng, hidden, 4 * hidden, RECURRENT_INIT), true);
    let mut b = Mat::zeros((1, 4 * hidden));
    b.slice_mut(s![.., hidden..2 * hidden]).fill(1.0);
    ps.insert(&format!("{prefix}.b"), b, true);
}

fn gru_init(ps: &mut ParamSet, rng: &mut ChaCha8Rng, prefix: &str, input: usize, hidden: usize) {
    ps.insert(&format!("{prefix}.w_x"), uniform(rng, input, 3 * hidden, RECURRENT_INIT), true);
    ps.insert(&format!("{prefix}.u_zr"), uniform(rng, hidden, 2 * hidden, RECURRENT_INIT), true);
    ps.insert(&format!("{prefix}.u_h"), uniform(rng, hidden, hidden, RECURRENT_INIT), true);
    ps.insert(&format!("{prefix}.b"), Mat::zeros((1, 3 * hidden)), true);
}

/// Fresh parameters for `spec`. The language head draws from its own
/// stream, so enabling it leaves every other tensor unchanged.
pub fn init_params(spec: &ModelSpec, vocab_size: usize, char_vocab_size: usize, seed: u64) -> Result<ParamSet> {
    spec.validate()?;
    if vocab_size == 0 {
        return Err(NnError::Spec("vocabulary is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::new();
    let h = spec.hidden;
    ps.insert("embed.words", uniform(&mut rng, vocab_size, spec.embed_dim, EMBED_INIT), spec.train_embeddings);
    if let Some(c) = spec.char_bilstm {
        if char_vocab_size == 0 {
            return Err(NnError::Spec("character vocabulary is empty".into()));
        }
        ps.insert("embed.chars", uniform(&mut rng, char_vocab_size, c.char_dim, EMBED_INIT), true);
        lstm_init(&mut ps, &mut rng, "char.fw", c.char_dim, c.char_hidden);
        lstm_init(&mut ps, &mut rng, "char.bw", c.char_dim, c.char_hidden);
    }
    let input = spec.input_dim();
    for dir in ["enc.fw", "enc.bw"] {
        if spec.encoder.uses_lstm() {
            lstm_init(&mut ps, &mut rng, dir, input, h);
        } else {
            gru_init(&mut ps, &mut rng, dir, input, h);
        }
    }
    match spec.encoder {
        EncoderKind::BilstmConv => {
            let fan_in = spec.conv_kernel * 2 * h;
            ps.insert("conv.kernel", glorot(&mut rng, fan_in, spec.conv_filters), true);
            ps.insert("conv.b", Mat::zeros((1, spec.conv_filters)), true);
        }
        EncoderKind::Bigru => {}
        EncoderKind::BilstmCapsule | EncoderKind::BigruCapsule => {
            ps.insert("caps.w", glorot(&mut rng, 2 * h, spec.feature_dim()), true);
        }
        EncoderKind::HanAttn => {
            ps.insert("attn.w", glorot(&mut rng, 2 * h, spec.attention_dim), true);
            ps.insert("attn.b", Mat::zeros((1, spec.attention_dim)), true);
            ps.insert("attn.u", glorot(&mut rng, spec.attention_dim, 1), true);
        }
    }
    let feat = spec.feature_dim();
    ps.insert("head.sent.w", glorot(&mut rng, feat, SentLabel::ALL.len()), true);
    ps.insert("head.sent.b", Mat::zeros((1, SentLabel::ALL.len())), true);
    if spec.mtl.is_some() {
        let mut lang_rng = ChaCha8Rng::seed_from_u64(seed);
        lang_rng.set_stream(1);
        ps.insert("head.lang.w", glorot(&mut lang_rng, feat, 2), true);
        ps.insert("head.lang.b", Mat::zeros((1, 2)), true);
    }
    Ok(ps)
}

/// Copies pretrained vectors into `embed.words` for every vocabulary word the
/// table covers. Returns the number of rows copied.
pub fn load_pretrained(params: &mut ParamSet, vocab: &Vocab, table: &EmbeddingTable) -> Result<usize> {
    let words = params
        .get_mut("embed.words")
        .ok_or_else(|| NnError::Spec("no word embedding tensor".into()))?;
    if words.ncols() != table.dim() {
        return Err(NnError::Shape(format!("embedding dim {} against table dim {}", words.ncols(), table.dim())));
    }
    let mut found = 0;
    for (i, token) in vocab.tokens().iter().enumerate().skip(1) {
        if let Some(row) = table.get(token) {
            words.row_mut(i).assign(&row);
            found += 1;
        }
    }
    Ok(found)
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub sent_logits: Var,
    pub lang_logits: Option<Var>,
    pub attention: Option<Var>,
    pub couplings: Vec<Var>,
}

fn check_ids(tape: &Tape, name: &str, ids: &[usize]) -> Result<()> {
    let rows = tape.params().get(name).map_or(0, |m| m.nrows());
    match ids.iter().find(|&&i| i >= rows) {
        Some(i) => Err(NnError::Shape(format!("index {i} out of range for {name} with {rows} rows"))),
        None => Ok(()),
    }
}

/// Forward pass for one tweet. Each instance runs at its own length, so no
/// padding mask is needed.
pub fn forward(
    tape: &mut Tape,
    spec: &ModelSpec,
    inst: &EncodedInstance,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<Forward> {
    if inst.word_ids.is_empty() {
        return Err(NnError::Shape(format!("instance {:?} has no words", inst.id)));
    }
    check_ids(tape, "embed.words", &inst.word_ids)?;
    let mut x = tape.gather("embed.words", &inst.word_ids);
    if spec.char_bilstm.is_some() {
        if inst.char_ids.len() != inst.word_ids.len() {
            return Err(NnError::Shape(format!("instance {:?}: character rows do not match words", inst.id)));
        }
        let fw = LstmWeights::from_prefix(tape, "char.fw");
        let bw = LstmWeights::from_prefix(tape, "char.bw");
        let mut reprs = Vec::with_capacity(inst.char_ids.len());
        for chars in &inst.char_ids {
            check_ids(tape, "embed.chars", chars)?;
            reprs.push(layers::char_bilstm_word_repr(tape, chars, "embed.chars", &fw, &bw)?);
        }
        let chars = tape.concat_rows(&reprs);
        x = tape.concat_cols(&[x, chars]);
    }
    let x = layers::spatial_dropout(tape, x, spec.spatial_dropout, mode, rng);
    let states = if spec.encoder.uses_lstm() {
        let fw = LstmWeights::from_prefix(tape, "enc.fw");
        let bw = LstmWeights::from_prefix(tape, "enc.bw");
        layers::bilstm_forward(tape, x, &fw, &bw)?
    } else {
        let fw = GruWeights::from_prefix(tape, "enc.fw");
        let bw = GruWeights::from_prefix(tape, "enc.bw");
        layers::bigru_forward(tape, x, &fw, &bw)?
    };

    let mut attention = None;
    let mut couplings = Vec::new();
    let feat = match spec.encoder {
        EncoderKind::BilstmConv => {
            let mut seq = layers::dropout(tape, states, spec.dropout, mode, rng);
            let (t, c) = tape.shape(seq);
            if t < spec.conv_kernel {
                let pad = tape.zeros(spec.conv_kernel - t, c);
                seq = tape.concat_rows(&[seq, pad]);
            }
            let kernel = tape.param("conv.kernel");
            let bias = tape.param("conv.b");
            layers::conv_maxpool(tape, seq, kernel, bias, spec.conv_kernel)?
        }
        EncoderKind::Bigru => {
            let seq = layers::dropout(tape, states, spec.dropout, mode, rng);
            tape.max_rows(seq)
        }
        EncoderKind::BilstmCapsule | EncoderKind::BigruCapsule => {
            let (j, d) = (spec.num_capsules.unwrap_or(1), spec.capsule_dim.unwrap_or(1));
            let w = tape.param("caps.w");
            let out = layers::capsule_layer(tape, states, w, j, d, spec.routing_iters.unwrap_or(1))?;
            couplings = out.couplings;
            let flat = tape.reshape(out.capsules, 1, j * d);
            layers::dropout(tape, flat, spec.dropout, mode, rng)
        }
        EncoderKind::HanAttn => {
            let w = tape.param("attn.w");
            let b = tape.param("attn.b");
            let u = tape.param("attn.u");
            let att = layers::attention_pool(tape, states, w, b, u);
            attention = Some(att.weights);
            layers::dropout(tape, att.pooled, spec.dropout, mode, rng)
        }
    };

    let sent = Dense::from_prefix(tape, "head.sent");
    let lang = spec.mtl.map(|_| Dense::from_prefix(tape, "head.lang"));
    let heads = layers::heads_forward(tape, feat, &sent, lang.as_ref());
    Ok(Forward {
        sent_logits: heads.sent_logits,
        lang_logits: heads.lang_logits,
        attention,
        couplings,
    })
}

/// Sentiment cross-entropy plus, with MTL, `lambda` times the
/// dominant-language cross-entropy.
pub fn instance_loss(tape: &mut Tape, spec: &ModelSpec, fwd: &Forward, inst: &EncodedInstance) -> Result<Var> {
    let sent = layers::softmax_xent(tape, fwd.sent_logits, inst.label)?;
    match (spec.mtl, fwd.lang_logits) {
        (Some(m), Some(lang_logits)) => {
            let lang = layers::softmax_xent(tape, lang_logits, inst.lang)?;
            Ok(layers::mtl_loss(tape, sent, lang, m.lambda))
        }
        _ => Ok(sent),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub sent_logits: Vec<[f64; 3]>,
    pub lang_logits: Option<Vec<[f64; 2]>>,
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

impl ModelOutput {
    /// Predicted sentiment class per instance; ties go to the lower index.
    pub fn predictions(&self) -> Vec<usize> {
        self.sent_logits.iter().map(|l| argmax(l)).collect()
    }

    pub fn lang_predictions(&self) -> Option<Vec<usize>> {
        self.lang_logits.as_ref().map(|ls| ls.iter().map(|l| argmax(l)).collect())
    }
}

/// Eval-mode logits for every instance.
pub fn predict(spec: &ModelSpec, params: &ParamSet, data: &[EncodedInstance]) -> Result<ModelOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut sent_logits = Vec::with_capacity(data.len());
    let mut lang_logits = spec.mtl.map(|_| Vec::with_capacity(data.len()));
    for inst in data {
        let mut tape = Tape::new(params);
        let fwd = forward(&mut tape, spec, inst, Mode::Eval, &mut rng)?;
        let s = tape.value(fwd.sent_logits);
        sent_logits.push([s[[0, 0]], s[[0, 1]], s[[0, 2]]]);
        if let (Some(out), Some(l)) = (lang_logits.as_mut(), fwd.lang_logits) {
            let l = tape.value(l);
            out.push([l[[0, 0]], l[[0, 1]]]);
        }
    }
    Ok(ModelOutput { sent_logits, lang_logits })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub spec: ModelSpec,
    pub vocab: Vec<String>,
    pub chars: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn new(spec: &ModelSpec, vocab: &Vocab, chars: &Vocab, params: &ParamSet) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            spec: spec.clone(),
            vocab: vocab.tokens().to_vec(),
            chars: chars.tokens().to_vec(),
            tensors: params.to_tensors(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn vocabs(&self) -> (Vocab, Vocab) {
        (Vocab::from_tokens(self.vocab.iter().skip(1).cloned()), Vocab::from_tokens(self.chars.iter().skip(1).cloned()))
    }

    /// Parameters, checked against the layout `spec` implies.
    pub fn params(&self) -> Result<ParamSet> {
        let ps = ParamSet::from_tensors(self.tensors.clone()).map_err(NnError::Checkpoint)?;
        let expected = init_params(&self.spec, self.vocab.len(), self.chars.len().max(1), 0)?;
        if ps.len() != expected.len() {
            return Err(NnError::Checkpoint(format!("{} tensors, layout needs {}", ps.len(), expected.len())));
        }
        for (name, m) in expected.iter() {
            match ps.get(name) {
                Some(v) if v.dim() == m.dim() => {}
                Some(v) => {
                    return Err(NnError::Checkpoint(format!("tensor {name:?} has shape {:?}, expected {:?}", v.dim(), m.dim())))
                }
                None => return Err(NnError::Checkpoint(format!("missing tensor {name:?}"))),
            }
        }
        Ok(ps)
    }

    fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(NnError::Checkpoint(format!("unsupported format {:?}", self.format)));
        }
        if self.vocab.first().map(String::as_str) != Some(UNK) {
            return Err(NnError::Checkpoint("vocabulary must start with <unk>".into()));
        }
        self.spec.validate()?;
        self.params().map(|_| ())
    }
}
