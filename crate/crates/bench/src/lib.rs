//! Seeded synthetic inputs shared by the benchmarks.

use codemix_core::corpus::{Dataset, Instance, LangTag, LanguagePair, Origin, SentLabel, Token};
use codemix_core::embed::{BilingualLexicon, EmbeddingTable};
use codemix_core::nn::EncodedInstance;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SYLLABLES: [&str; 12] = ["ka", "ra", "ma", "ne", "hai", "the", "is", "so", "pa", "li", "do", "ya"];

fn word(rng: &mut ChaCha8Rng) -> String {
    let mut w: String = (0..rng.random_range(1..4)).map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())]).collect();
    match rng.random_range(0..12) {
        0 => w.insert(0, '@'),
        1 => w.push_str("!!!"),
        2 => w = w.to_uppercase(),
        3 => w.push('😂'),
        _ => {}
    }
    w
}

/// `n` HI_EN tweets of 1 to `2 * mean_len - 1` tokens.
pub fn tweets(n: usize, mean_len: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let instances = (0..n)
        .map(|i| Instance {
            id: format!("t{i}"),
            tokens: (0..rng.random_range(1..2 * mean_len))
                .map(|_| Token::new(word(&mut rng), LangTag::ALL[rng.random_range(0..3)]))
                .collect(),
            label: SentLabel::ALL[rng.random_range(0..3)],
            origin: Origin::Competition,
        })
        .collect();
    Dataset::new(instances, LanguagePair::HiEn)
}

/// Already encoded tweets of exactly `len` words.
pub fn encoded(n: usize, len: usize, vocab: usize, chars: usize, seed: u64) -> Vec<EncodedInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| EncodedInstance {
            id: format!("e{i}"),
            word_ids: (0..len).map(|_| rng.random_range(0..vocab)).collect(),
            char_ids: (0..len)
                .map(|_| (0..rng.random_range(2..8)).map(|_| rng.random_range(0..chars)).collect())
                .collect(),
            label: rng.random_range(0..3),
            lang: rng.random_range(0..2),
        })
        .collect()
}

/// Two random `n x d` tables and the lexicon pairing row `i` with row `i`.
pub fn embedding_pair(n: usize, d: usize, seed: u64) -> (EmbeddingTable, EmbeddingTable, BilingualLexicon) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = |prefix: &str| {
        let rows = (0..n)
            .map(|i| (format!("{prefix}{i}"), (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        EmbeddingTable::from_rows(rows).expect("well-formed rows")
    };
    let (src, tgt) = (table("s"), table("t"));
    let lex = BilingualLexicon::new((0..n).map(|i| (format!("s{i}"), format!("t{i}"))).collect());
    (src, tgt, lex)
}
