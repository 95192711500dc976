//! Synthetic topic corpora for tests, demos and the bundled data.
//!
//! Each class owns a disjoint set of keywords; every document mixes keywords
//! of its topic with shared filler words. Labels can be flipped with a given
//! probability to produce a model whose accuracy against the (noisy) labels is
//! controlled.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{is_stopword, Dataset, Document};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_docs: usize,
    pub n_classes: usize,
    pub keywords_per_class: usize,
    pub filler_words: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a token is a topic keyword rather than filler.
    pub keyword_rate: f64,
    /// Probability that a document's label is replaced by another class.
    pub label_noise: f64,
    pub seed: u64,
    pub id_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_docs: 200,
            n_classes: 2,
            keywords_per_class: 12,
            filler_words: 60,
            min_len: 12,
            max_len: 30,
            keyword_rate: 0.3,
            label_noise: 0.0,
            seed: 0,
            id_prefix: "doc".into(),
        }
    }
}

const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// The `i`-th pseudo-word: three consonant-vowel syllables, never a stopword.
pub fn pseudo_word(mut i: usize) -> String {
    let mut w = String::new();
    for _ in 0..3 {
        let s = i % (ONSETS.len() * VOWELS.len());
        i /= ONSETS.len() * VOWELS.len();
        w.push_str(ONSETS[s % ONSETS.len()]);
        w.push_str(VOWELS[s / ONSETS.len()]);
    }
    debug_assert!(!is_stopword(&w));
    w
}

/// Keywords of `class` (0-based).
pub fn keywords(config: &SynthConfig, class: usize) -> Vec<String> {
    (0..config.keywords_per_class)
        .map(|j| pseudo_word(config.filler_words + class * config.keywords_per_class + j))
        .collect()
}

pub fn generate(config: &SynthConfig) -> Dataset {
    assert!(config.n_classes >= 2 && config.min_len >= 1 && config.min_len <= config.max_len);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let filler: Vec<String> = (0..config.filler_words.max(1)).map(pseudo_word).collect();
    let topic: Vec<Vec<String>> = (0..config.n_classes).map(|k| keywords(config, k)).collect();
    let docs = (0..config.n_docs)
        .map(|i| {
            let class = i % config.n_classes;
            let len = rng.random_range(config.min_len..=config.max_len);
            let words: Vec<&str> = (0..len)
                .map(|_| {
                    let pool = if rng.random_bool(config.keyword_rate) {
                        &topic[class]
                    } else {
                        &filler
                    };
                    pool.choose(&mut rng).expect("non-empty pool").as_str()
                })
                .collect();
            let mut label = class;
            if rng.random_bool(config.label_noise) {
                label = (class + rng.random_range(1..config.n_classes)) % config.n_classes;
            }
            Document {
                id: format!("{}{i:05}", config.id_prefix),
                text: capitalize(&words.join(" ")) + ".",
                label: Some(label),
            }
        })
        .collect();
    let names = (1..=config.n_classes).map(|k| k.to_string()).collect();
    Dataset::new(docs, names).expect("generated documents are valid")
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_well_formed() {
        let cfg = SynthConfig {
            label_noise: 0.2,
            ..SynthConfig::default()
        };
        let a = generate(&cfg);
        assert_eq!(a.to_tsv(), generate(&cfg).to_tsv());
        assert_eq!(a.docs.len(), 200);
        let reparsed = Dataset::parse_tsv(&a.to_tsv()).unwrap();
        assert_eq!(reparsed.labels(), a.labels());
        let flipped = a
            .docs
            .iter()
            .enumerate()
            .filter(|(i, d)| d.label != Some(i % 2))
            .count();
        assert!((20..60).contains(&flipped), "{flipped}");
    }

    #[test]
    fn pseudo_words_are_distinct() {
        let words: std::collections::HashSet<String> = (0..2000).map(pseudo_word).collect();
        assert_eq!(words.len(), 2000);
        assert!(words.iter().all(|w| !is_stopword(w)));
    }
}
