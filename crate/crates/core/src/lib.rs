//! Sentiment analysis for code-mixed tweets (Hindi-English, Spanish-English).
//!
//! The pipeline runs `corpus` ingestion, `textnorm` normalization, `embed`
//! cross-lingual alignment, `augment`ation, training of the `nn` encoders,
//! and `eval` scoring.

pub mod augment;
pub mod corpus;
pub mod embed;
pub mod eval;
pub mod nn;
pub mod textnorm;

pub use corpus::{Dataset, Instance, LangTag, LanguagePair, MajorityLang, Origin, SentLabel, TagMapping, Token};
pub use embed::{AlignmentMap, EmbeddingTable};
pub use eval::{ConfusionMatrix, MetricsReport};
pub use nn::{EncoderKind, ModelSpec, ParamSet, TrainConfig};
pub use textnorm::{NormConfig, NormalizedInstance};
