use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::TrainingError;
use crate::corpus::{DatasetSplit, SplitExample};
use crate::encoder::{encode_history, Parameters};
use crate::ranker::{rank_indices, score_catalog, CatalogEmbeddings, RankerError};
use crate::verbalize::Featurizer;

/// Draw `k` distinct items uniformly from `universe` minus `exclude`.
fn sample_excluding<R: Rng + ?Sized>(
    universe: &[String],
    exclude: &HashSet<&str>,
    k: usize,
    rng: &mut R,
) -> Result<Vec<String>, TrainingError> {
    let available: Vec<&String> = universe.iter().filter(|i| !exclude.contains(i.as_str())).collect();
    if available.len() < k {
        return Err(TrainingError::InsufficientCandidates { available: available.len(), requested: k });
    }
    Ok(available.choose_multiple(rng, k).map(|s| (*s).clone()).collect())
}

/// Uniform without replacement from the catalog, never touching `exclude`.
pub fn sample_random_negatives<R: Rng + ?Sized>(
    catalog: &[String],
    exclude: &HashSet<&str>,
    k: usize,
    rng: &mut R,
) -> Result<Vec<String>, TrainingError> {
    sample_excluding(catalog, exclude, k, rng)
}

/// Uniform without replacement from the popular set, never touching `exclude`.
pub fn sample_popular_negatives<R: Rng + ?Sized>(
    popular: &[String],
    exclude: &HashSet<&str>,
    k: usize,
    rng: &mut R,
) -> Result<Vec<String>, TrainingError> {
    sample_excluding(popular, exclude, k, rng)
}

/// What counts as one occurrence when measuring popularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopularityBasis {
    /// Every interaction in the filtered corpus.
    FullDataset,
    /// Only the targets of training examples.
    TrainTargets,
}

impl std::str::FromStr for PopularityBasis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full_dataset" => Ok(PopularityBasis::FullDataset),
            "train_targets" => Ok(PopularityBasis::TrainTargets),
            other => Err(format!("unknown popularity basis {other:?}")),
        }
    }
}

/// Item occurrences under `basis`. Full histories are rebuilt from the test
/// examples, which hold every user's complete sequence.
pub fn popularity_occurrences(split: &DatasetSplit, basis: PopularityBasis) -> Vec<&str> {
    match basis {
        PopularityBasis::TrainTargets => split.train.iter().map(|e| e.target.as_str()).collect(),
        PopularityBasis::FullDataset => split
            .test
            .iter()
            .flat_map(|e| e.prefix.iter().chain(std::iter::once(&e.target)))
            .map(String::as_str)
            .collect(),
    }
}

/// The `top_n` most frequent items, ties broken by ascending item id.
pub fn build_popular_set<'a>(occurrences: impl IntoIterator<Item = &'a str>, top_n: usize) -> Vec<String> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for id in occurrences {
        *counts.entry(id).or_default() += 1;
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.into_iter().take(top_n).map(|(id, _)| id.to_string()).collect()
}

/// For each example, the `pool_size` best-scoring catalog items under
/// `params`, skipping the user's full history and the target.
pub fn mine_hard_negatives(
    params: &Parameters,
    featurizer: &Featurizer,
    catalog: &CatalogEmbeddings,
    examples: &[SplitExample],
    histories: &HashMap<String, Vec<String>>,
    pool_size: usize,
) -> Result<Vec<Vec<String>>, TrainingError> {
    if catalog.dim() != params.config().hidden_dim {
        return Err(RankerError::DimensionMismatch(params.config().hidden_dim, catalog.dim()).into());
    }
    examples
        .par_iter()
        .map(|e| {
            let batch = featurizer.history_sessions(&e.user_id, &e.prefix)?;
            let user = encode_history(params, &batch, &e.user_id)?;
            let scores = score_catalog(&user, catalog)?;
            let exclude = exclusion_set(e, histories);
            Ok(rank_indices(&scores, &catalog.item_ids)
                .into_iter()
                .map(|i| &catalog.item_ids[i])
                .filter(|id| !exclude.contains(id.as_str()))
                .take(pool_size)
                .cloned()
                .collect())
        })
        .collect()
}

/// The user's full interaction history plus the example's target.
pub fn exclusion_set<'a>(example: &'a SplitExample, histories: &'a HashMap<String, Vec<String>>) -> HashSet<&'a str> {
    let mut set: HashSet<&str> = example.prefix.iter().map(String::as_str).collect();
    set.insert(&example.target);
    if let Some(h) = histories.get(&example.user_id) {
        set.extend(h.iter().map(String::as_str));
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ids(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn forced_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let catalog = ids(&["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"]);
        let exclude: HashSet<&str> = ["a"].into_iter().collect();
        let mut got = sample_random_negatives(&catalog, &exclude, 9, &mut rng).unwrap();
        got.sort();
        assert_eq!(got, &catalog[1..]);

        let popular = ids(&["p1", "p2", "p3", "p4", "p5"]);
        let exclude: HashSet<&str> = ["p1"].into_iter().collect();
        let mut got = sample_popular_negatives(&popular, &exclude, 4, &mut rng).unwrap();
        got.sort();
        assert_eq!(got, &popular[1..]);
        assert!(matches!(
            sample_popular_negatives(&popular, &exclude, 5, &mut rng),
            Err(TrainingError::InsufficientCandidates { available: 4, requested: 5 })
        ));
    }

    #[test]
    fn popular_set_ordering() {
        let occ = [vec!["x"; 5], vec!["y"; 2], vec!["z"; 9]].concat();
        assert_eq!(build_popular_set(occ.iter().copied(), 2), ids(&["z", "x"]));
        assert_eq!(build_popular_set(occ.iter().copied(), 10).len(), 3);
        let tie = ["b", "a", "c", "c"];
        assert_eq!(build_popular_set(tie, 2), ids(&["c", "a"]));
    }
}
