//! Seeded synthetic corpora for tests and examples.
//!
//! Items sit on a cycle. Each user walks forward along it from a start
//! position, so the next item always follows the newest one. Every item
//! names its predecessor in a `follows` attribute, which makes the target
//! recoverable from the history text. Start positions are skewed toward
//! the front of the cycle, giving a head of popular items and a long tail.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, WeightedIndex};

use crate::corpus::{write_interactions, write_item_catalog, CorpusError, InteractionRecord, ItemRecord};

const SYLLABLES: [&str; 16] =
    ["ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "ze", "bu", "da", "fe", "go", "hi", "ju", "py"];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub users: usize,
    pub items: usize,
    pub min_history: usize,
    pub max_history: usize,
    /// Exponent of the start-position weights `1 / (1 + s)^skew`.
    pub skew: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig { users: 50, items: 30, min_history: 6, max_history: 10, skew: 0.6, seed: 7 }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub interactions: Vec<InteractionRecord>,
    pub items: Vec<ItemRecord>,
}

/// A pronounceable word unique to `index`.
pub fn item_word(index: usize) -> String {
    let mut word = String::new();
    let mut i = index;
    loop {
        word.push_str(SYLLABLES[i % SYLLABLES.len()]);
        i /= SYLLABLES.len();
        if i == 0 {
            break;
        }
    }
    word.push_str(SYLLABLES[(index * 7 + 3) % SYLLABLES.len()]);
    word
}

pub fn item_id(index: usize) -> String {
    format!("{}", 1000 + index)
}

pub fn generate(config: &SyntheticConfig) -> SyntheticCorpus {
    assert!(config.items >= 2, "a cycle needs at least two items");
    assert!(config.min_history >= 1 && config.min_history <= config.max_history);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.items;
    let items: Vec<ItemRecord> = (0..n)
        .map(|i| {
            ItemRecord::new(item_id(i))
                .with_attribute("title", format!("{} {}", item_word(i), ["set", "kit", "pack"][i % 3]))
                .with_attribute("follows", item_word((i + n - 1) % n))
        })
        .collect();

    let weights: Vec<f64> = (0..n).map(|s| 1.0 / (1.0 + s as f64).powf(config.skew)).collect();
    let starts = WeightedIndex::new(&weights).expect("positive weights");
    let mut interactions = Vec::new();
    for u in 0..config.users {
        let user = format!("u{u:04}");
        let len = rng.gen_range(config.min_history..=config.max_history);
        let start = starts.sample(&mut rng);
        let mut t: i64 = 1_546_300_000 + rng.gen_range(0..86_400);
        for step in 0..len {
            interactions.push(InteractionRecord::new(user.clone(), item_id((start + step) % n), t));
            t += rng.gen_range(60..86_400);
        }
    }
    SyntheticCorpus { interactions, items }
}

impl SyntheticCorpus {
    /// Writes `interactions.tsv` and `items.jsonl` under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), CorpusError> {
        let dir = dir.as_ref();
        write_interactions(dir.join("interactions.tsv"), &self.interactions)?;
        write_item_catalog(dir.join("items.jsonl"), &self.items)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn words_are_distinct() {
        let words: HashSet<String> = (0..500).map(item_word).collect();
        assert_eq!(words.len(), 500);
    }

    #[test]
    fn walks_follow_the_cycle() {
        let c = generate(&SyntheticConfig::default());
        assert_eq!(c.items.len(), 30);
        for pair in c.interactions.windows(2) {
            if pair[0].user_id == pair[1].user_id {
                let a: usize = pair[0].item_id.parse::<usize>().unwrap() - 1000;
                let b: usize = pair[1].item_id.parse::<usize>().unwrap() - 1000;
                assert_eq!(b, (a + 1) % 30);
                assert!(pair[1].timestamp > pair[0].timestamp);
            }
        }
        let again = generate(&SyntheticConfig::default());
        assert_eq!(c.interactions, again.interactions);
    }
}
