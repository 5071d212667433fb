//! Popularity-bias and long-tail diagnostics.

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ItemCatalog, SplitExample};
use crate::ranker::{MetricsReport, UserRanking};
use crate::verbalize::word_tokens;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("tail fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
    #[error("n-gram order must be at least 1")]
    InvalidOrder,
    #[error("gold text of user {0} is empty")]
    EmptyReference(String),
    #[error("the popular set is empty")]
    EmptyPopularSet,
    #[error("top_k must be at least 1")]
    InvalidTopK,
}

/// Training-target counts per item, zero-filled over the catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub item_ids: Vec<String>,
    pub counts: Vec<usize>,
}

impl FrequencyTable {
    pub fn get(&self, item_id: &str) -> usize {
        self.item_ids.iter().position(|i| i == item_id).map_or(0, |p| self.counts[p])
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }
}

/// Count how often each item is a training target. Items never seen as a
/// target get 0; targets outside the catalog are appended.
pub fn item_frequency(train: &[SplitExample], catalog: &ItemCatalog) -> FrequencyTable {
    let mut item_ids: Vec<String> = catalog.item_ids().map(str::to_string).collect();
    let mut index: HashMap<String, usize> = item_ids.iter().cloned().enumerate().map(|(i, id)| (id, i)).collect();
    let mut counts = vec![0; item_ids.len()];
    for e in train {
        let i = *index.entry(e.target.clone()).or_insert_with(|| {
            item_ids.push(e.target.clone());
            counts.push(0);
            item_ids.len() - 1
        });
        counts[i] += 1;
    }
    FrequencyTable { item_ids, counts }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailSplit {
    pub threshold: usize,
    /// Items with count ≤ threshold.
    pub long_tail: BTreeSet<String>,
    pub head: BTreeSet<String>,
    /// Fraction of items in the long tail.
    pub achieved_ratio: f64,
}

impl TailSplit {
    pub fn is_long_tail(&self, item_id: &str) -> bool {
        !self.head.contains(item_id)
    }
}

pub fn tail_split_by_threshold(freq: &FrequencyTable, threshold: usize) -> TailSplit {
    let mut long_tail = BTreeSet::new();
    let mut head = BTreeSet::new();
    for (id, &c) in freq.item_ids.iter().zip(&freq.counts) {
        if c <= threshold {
            long_tail.insert(id.clone());
        } else {
            head.insert(id.clone());
        }
    }
    let achieved_ratio = if freq.is_empty() { 0.0 } else { long_tail.len() as f64 / freq.len() as f64 };
    TailSplit { threshold, long_tail, head, achieved_ratio }
}

/// The smallest threshold whose long tail covers at least `tail_fraction`
/// of the items.
pub fn tail_split_by_ratio(freq: &FrequencyTable, tail_fraction: f64) -> Result<TailSplit, AnalysisError> {
    if !(tail_fraction > 0.0 && tail_fraction < 1.0) {
        return Err(AnalysisError::InvalidFraction(tail_fraction));
    }
    let mut sorted = freq.counts.clone();
    sorted.sort_unstable();
    let needed = ((tail_fraction * sorted.len() as f64).ceil() as usize).max(1);
    let threshold = sorted.get(needed - 1).copied().unwrap_or(0);
    Ok(tail_split_by_threshold(freq, threshold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedMetrics {
    pub long_tail: MetricsReport,
    pub head: MetricsReport,
}

/// Partition users by whether their target is long-tail and average
/// metrics within each group.
pub fn grouped_metrics(rankings: &[UserRanking], split: &TailSplit, cutoffs: &[usize]) -> GroupedMetrics {
    let (tail, head): (Vec<&UserRanking>, Vec<&UserRanking>) =
        rankings.iter().partition(|r| split.is_long_tail(&r.target));
    let ranks = |group: &[&UserRanking]| group.iter().map(|r| r.rank_of_target).collect::<Vec<_>>();
    GroupedMetrics {
        long_tail: MetricsReport::from_ranks(&ranks(&tail), cutoffs),
        head: MetricsReport::from_ranks(&ranks(&head), cutoffs),
    }
}

/// Share of all top-`top_k` slots taken by popular items.
pub fn popular_ratio<S: AsRef<str>>(
    top_lists: &[Vec<S>],
    popular: &HashSet<&str>,
    top_k: usize,
) -> Result<f64, AnalysisError> {
    if top_k == 0 {
        return Err(AnalysisError::InvalidTopK);
    }
    let mut slots = 0usize;
    let mut hits = 0usize;
    for list in top_lists {
        for id in list.iter().take(top_k) {
            slots += 1;
            hits += usize::from(popular.contains(id.as_ref()));
        }
    }
    Ok(if slots == 0 { 0.0 } else { hits as f64 / slots as f64 })
}

fn ngrams<'a>(tokens: &'a [&'a str], n: usize) -> Vec<&'a [&'a str]> {
    if tokens.len() < n {
        return Vec::new();
    }
    tokens.windows(n).collect()
}

/// Distinct-n: unique over total n-grams of each user's concatenated
/// texts, averaged over users that have at least one n-gram. Returns 0
/// when no user has any.
pub fn dist_n<S: AsRef<str>>(per_user_texts: &[Vec<S>], n: usize) -> Result<f64, AnalysisError> {
    if n == 0 {
        return Err(AnalysisError::InvalidOrder);
    }
    let mut sum = 0.0;
    let mut users = 0usize;
    for texts in per_user_texts {
        let joined = texts.iter().map(AsRef::as_ref).collect::<Vec<&str>>().join(" ");
        let tokens = word_tokens(&joined);
        let grams = ngrams(&tokens, n);
        if grams.is_empty() {
            continue;
        }
        let unique: HashSet<&[&str]> = grams.iter().copied().collect();
        sum += unique.len() as f64 / grams.len() as f64;
        users += 1;
    }
    Ok(if users == 0 { 0.0 } else { sum / users as f64 })
}

/// Sentence BLEU-4 with uniform weights. An order with no clipped match
/// uses `1 / (total + 1)` in place of its precision.
pub fn sentence_bleu4(hypothesis: &[&str], reference: &[&str]) -> f64 {
    if hypothesis.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let mut ref_counts: HashMap<&[&str], usize> = HashMap::new();
        for g in ngrams(reference, n) {
            *ref_counts.entry(g).or_default() += 1;
        }
        let hyp = ngrams(hypothesis, n);
        let mut hyp_counts: HashMap<&[&str], usize> = HashMap::new();
        for g in &hyp {
            *hyp_counts.entry(g).or_default() += 1;
        }
        let matched: usize = hyp_counts.iter().map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0))).sum();
        let total = hyp.len();
        let p = if matched > 0 { matched as f64 / total as f64 } else { 1.0 / (total as f64 + 1.0) };
        log_sum += p.ln();
    }
    let (c, r) = (hypothesis.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * (log_sum / 4.0).exp()
}

/// BLEU-4 of each recommended text against the user's gold text, averaged
/// over the recommendations and then over users.
pub fn bleu4<S: AsRef<str>>(users: &[(String, Vec<S>, String)]) -> Result<f64, AnalysisError> {
    let mut sum = 0.0;
    let mut counted = 0usize;
    for (user_id, hyps, gold) in users {
        let reference = word_tokens(gold);
        if reference.is_empty() {
            return Err(AnalysisError::EmptyReference(user_id.clone()));
        }
        if hyps.is_empty() {
            continue;
        }
        let per: f64 =
            hyps.iter().map(|h| sentence_bleu4(&word_tokens(h.as_ref()), &reference)).sum::<f64>() / hyps.len() as f64;
        sum += per;
        counted += 1;
    }
    Ok(if counted == 0 { 0.0 } else { sum / counted as f64 })
}

/// `(item_id, label)` pairs for export: up to `per_group` popular items and
/// up to `per_group` others, each drawn with a seeded RNG and listed in
/// catalog order.
pub fn select_export_items(
    catalog_ids: &[String],
    popular: &HashSet<&str>,
    per_group: usize,
    seed: u64,
) -> Result<Vec<(String, &'static str)>, AnalysisError> {
    let (pop, rest): (Vec<&String>, Vec<&String>) = catalog_ids.iter().partition(|id| popular.contains(id.as_str()));
    if pop.is_empty() {
        return Err(AnalysisError::EmptyPopularSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |group: &[&String], label: &'static str| {
        let mut chosen: Vec<&String> = group.choose_multiple(&mut rng, per_group.min(group.len())).copied().collect();
        let order: HashMap<&str, usize> = group.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        chosen.sort_by_key(|s| order[s.as_str()]);
        chosen.into_iter().map(|s| (s.clone(), label)).collect::<Vec<_>>()
    };
    let mut out = pick(&pop, "popular");
    out.extend(pick(&rest, "other"));
    Ok(out)
}

/// Summary numbers for the analysis report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencySummary {
    pub items: usize,
    pub total: usize,
    pub max: usize,
    pub zero_count_items: usize,
}

impl From<&FrequencyTable> for FrequencySummary {
    fn from(t: &FrequencyTable) -> Self {
        FrequencySummary {
            items: t.len(),
            total: t.total(),
            max: t.counts.iter().copied().max().unwrap_or(0),
            zero_count_items: t.counts.iter().filter(|&&c| c == 0).count(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ItemRecord;

    fn table(counts: &[usize]) -> FrequencyTable {
        FrequencyTable { item_ids: (0..counts.len()).map(|i| format!("i{i}")).collect(), counts: counts.to_vec() }
    }

    fn toks(s: &str) -> Vec<&str> {
        word_tokens(s)
    }

    #[test]
    fn frequency_zero_fill() {
        let catalog = ItemCatalog::new(["a", "b", "c"].iter().map(|s| ItemRecord::new(*s)).collect());
        let ex = |t: &str| SplitExample { user_id: "u".into(), prefix: vec!["x".into()], target: t.into() };
        let f = item_frequency(&[ex("a"), ex("a"), ex("b")], &catalog);
        assert_eq!(f.counts, [2, 1, 0]);
        assert_eq!(f.total(), 3);
        assert_eq!(f.get("c"), 0);
    }

    #[test]
    fn ratio_split_fixture() {
        let f = table(&(0..10).collect::<Vec<_>>());
        let s = tail_split_by_ratio(&f, 0.2).unwrap();
        assert_eq!(s.threshold, 1);
        assert_eq!(s.long_tail.len(), 2);
        assert_eq!(s.achieved_ratio, 0.2);

        let zeros = tail_split_by_ratio(&table(&[0; 5]), 0.2).unwrap();
        assert_eq!(zeros.threshold, 0);
        assert_eq!(zeros.achieved_ratio, 1.0);
        assert!(zeros.head.is_empty());
        assert!(tail_split_by_ratio(&f, 1.0).is_err());
    }

    #[test]
    fn popular_ratio_fixture() {
        let popular: HashSet<&str> = ["p1", "p2", "p3"].into_iter().collect();
        let lists = vec![vec!["p1", "x", "y", "z", "w"], vec!["p2", "p3", "q", "r", "s"]];
        assert!((popular_ratio(&lists, &popular, 5).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(popular_ratio(&lists, &HashSet::new(), 5).unwrap(), 0.0);
    }

    #[test]
    fn dist_fixtures() {
        assert_eq!(dist_n(&[vec!["a"]], 1).unwrap(), 1.0);
        assert!((dist_n(&[vec!["a a a"]], 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(dist_n(&[vec!["a b", "a c"]], 1).unwrap(), 0.75);
        assert_eq!(dist_n(&[vec!["a"]], 2).unwrap(), 0.0);
    }

    #[test]
    fn bleu_fixtures() {
        let x = toks("the cat sat on the mat");
        assert!((sentence_bleu4(&x, &x) - 1.0).abs() < 1e-15);

        let disjoint = sentence_bleu4(&toks("p q r s t u"), &x);
        // 1/7 · 1/6 · 1/5 · 1/4, fourth root
        assert!((disjoint - (1.0f64 / 840.0).powf(0.25)).abs() < 1e-15);

        // hypothesis "the cat sat on a mat": clipped matches 5/6, 3/5, 2/4, 1/3;
        // equal lengths so no brevity penalty
        let h = toks("the cat sat on a mat");
        let expected = (5.0 / 6.0 * 3.0 / 5.0 * 2.0 / 4.0 * 1.0 / 3.0f64).powf(0.25);
        assert!((sentence_bleu4(&h, &x) - expected).abs() < 1e-15);

        let short = toks("the cat sat on");
        let bp = (1.0f64 - 6.0 / 4.0).exp();
        assert!((sentence_bleu4(&short, &x) - bp).abs() < 1e-15);

        let users =
            vec![("u".to_string(), vec!["the cat sat on the mat".to_string()], "the cat sat on the mat".to_string())];
        assert_eq!(bleu4(&users).unwrap(), 1.0);
        let empty = vec![("u".to_string(), vec!["a".to_string()], String::new())];
        assert!(bleu4(&empty).is_err());
    }

    #[test]
    fn export_selection() {
        let ids: Vec<String> = (0..200).map(|i| format!("{i:03}")).collect();
        let popular: HashSet<&str> = ids[..100].iter().map(String::as_str).collect();
        let sel = select_export_items(&ids, &popular, 50, 4).unwrap();
        assert_eq!(sel.len(), 100);
        assert_eq!(sel.iter().filter(|(_, l)| *l == "popular").count(), 50);
        assert_eq!(sel, select_export_items(&ids, &popular, 50, 4).unwrap());
        let small = select_export_items(&ids[95..110], &popular, 50, 4).unwrap();
        assert_eq!(small.len(), 15);
        assert!(select_export_items(&ids, &HashSet::new(), 50, 4).is_err());
    }
}
