//! Training-set extension: merging an external labeled corpus and pairing
//! short same-class tweets into synthetic ones.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dataset, Instance, LanguagePair, Origin, SentLabel};

/// Reference size of the synthetic training-set extension, reported next to
/// the actual count and never asserted.
pub const REFERENCE_SYNTHETIC_TOTAL: usize = 21_919;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("language pair mismatch: base is {base:?}, extra is {extra:?}")]
    PairMismatch { base: LanguagePair, extra: LanguagePair },
    #[error("dataset is empty")]
    Empty,
}

pub type Result<T> = std::result::Result<T, AugmentError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub pairing_seed: u64,
    pub max_pairs: Option<usize>,
    /// Chain consecutive shuffled tweets (a,b), (b,c), ... instead of
    /// disjoint pairs.
    pub allow_reuse: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            pairing_seed: 13,
            max_pairs: None,
            allow_reuse: false,
        }
    }
}

/// Appends `extra` as EXTERNAL instances. Every extra id gets a prefix that
/// keeps all ids unique.
pub fn merge_external(base: &Dataset, extra: &Dataset) -> Result<Dataset> {
    if base.language_pair != extra.language_pair {
        return Err(AugmentError::PairMismatch { base: base.language_pair, extra: extra.language_pair });
    }
    let taken = base.ids();
    let prefix = (1..)
        .map(|n: usize| if n == 1 { "ext-".to_string() } else { format!("ext{n}-") })
        .find(|p| extra.instances.iter().all(|i| !taken.contains(format!("{p}{}", i.id).as_str())))
        .expect("some prefix is free");
    let mut instances = base.instances.clone();
    instances.extend(extra.instances.iter().map(|i| Instance {
        id: format!("{prefix}{}", i.id),
        origin: Origin::External,
        ..i.clone()
    }));
    Ok(Dataset {
        instances,
        language_pair: base.language_pair,
        tag_mapping: base.tag_mapping.clone(),
    })
}

/// Three quarters of the mean token count. Tweets strictly shorter are
/// eligible for pairing.
pub fn length_threshold(ds: &Dataset) -> Result<f64> {
    let mean = ds.mean_len().ok_or(AugmentError::Empty)?;
    Ok(mean - mean / 4.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub eligible: usize,
    pub synthetic: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSummary {
    pub input_size: usize,
    pub threshold: f64,
    pub per_class: BTreeMap<SentLabel, ClassSummary>,
    pub synthetic: usize,
    pub output_size: usize,
    pub reference_total: usize,
}

#[derive(Debug, Clone)]
pub struct Augmented {
    pub dataset: Dataset,
    pub summary: AugmentSummary,
}

pub fn synth_pairs(ds: &Dataset, config: &AugmentConfig) -> Result<Augmented> {
    let threshold = length_threshold(ds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.pairing_seed);
    let mut taken: HashSet<String> = ds.instances.iter().map(|i| i.id.clone()).collect();
    let mut next_id = 0usize;
    let mut fresh_id = |taken: &mut HashSet<String>| loop {
        let id = format!("syn-{next_id}");
        next_id += 1;
        if taken.insert(id.clone()) {
            return id;
        }
    };

    let budget = config.max_pairs.unwrap_or(usize::MAX);
    let mut synthetic = Vec::new();
    let mut per_class = BTreeMap::new();
    for label in SentLabel::ALL {
        let mut eligible: Vec<&Instance> = ds
            .instances
            .iter()
            .filter(|i| i.label == label && (i.len() as f64) < threshold)
            .collect();
        eligible.shuffle(&mut rng);
        let pairs: Vec<(&Instance, &Instance)> = if config.allow_reuse {
            eligible.windows(2).map(|w| (w[0], w[1])).collect()
        } else {
            eligible.chunks_exact(2).map(|c| (c[0], c[1])).collect()
        };
        let mut made = 0;
        for (first, second) in pairs {
            if synthetic.len() >= budget {
                break;
            }
            let mut tokens = first.tokens.clone();
            tokens.extend(second.tokens.iter().cloned());
            synthetic.push(Instance {
                id: fresh_id(&mut taken),
                tokens,
                label,
                origin: Origin::Synthetic,
            });
            made += 1;
        }
        per_class.insert(label, ClassSummary { eligible: eligible.len(), synthetic: made });
    }

    log::info!(
        "threshold {threshold:.3}: {} synthetic tweets, {} total (reference total {REFERENCE_SYNTHETIC_TOTAL})",
        synthetic.len(),
        ds.len() + synthetic.len()
    );
    let mut instances = ds.instances.clone();
    let made = synthetic.len();
    instances.extend(synthetic);
    let summary = AugmentSummary {
        input_size: ds.len(),
        threshold,
        per_class,
        synthetic: made,
        output_size: instances.len(),
        reference_total: REFERENCE_SYNTHETIC_TOTAL,
    };
    Ok(Augmented {
        dataset: Dataset {
            instances,
            language_pair: ds.language_pair,
            tag_mapping: ds.tag_mapping.clone(),
        },
        summary,
    })
}
