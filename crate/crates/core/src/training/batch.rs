use std::collections::HashMap;

use super::TrainingError;
use crate::encoder::{HistoryInput, ItemInput, LossBatch};
use crate::ranker::RankerError;
use crate::verbalize::Featurizer;

/// One training example with its sampled negatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub user_id: String,
    pub prefix: Vec<String>,
    pub target: String,
    pub negatives: Vec<String>,
}

/// Deduplicated candidate list for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateLayout {
    pub item_ids: Vec<String>,
    /// Candidate column of each example's target.
    pub positives: Vec<usize>,
    /// Per-example support; `None` means every candidate is shared.
    pub allowed: Option<Vec<Vec<bool>>>,
}

impl CandidateLayout {
    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    /// Positives and negatives each example's softmax actually ranges over.
    pub fn support(&self, example: usize) -> usize {
        match &self.allowed {
            Some(a) => a[example].iter().filter(|&&b| b).count(),
            None => self.len(),
        }
    }
}

/// Positives first in example order, then sampled negatives, skipping any
/// item already present.
///
/// With `shared_pool` every example ranks its target against all
/// candidates. Otherwise an example sees the in-batch positives and only
/// its own sampled negatives.
pub fn candidate_layout(examples: &[TrainingExample], shared_pool: bool) -> Result<CandidateLayout, TrainingError> {
    if examples.is_empty() {
        return Err(TrainingError::EmptyBatch);
    }
    let mut item_ids: Vec<String> = Vec::new();
    let mut column: HashMap<String, usize> = HashMap::new();
    let mut intern = |id: &str| -> usize {
        if let Some(&c) = column.get(id) {
            return c;
        }
        item_ids.push(id.to_string());
        column.insert(id.to_string(), item_ids.len() - 1);
        item_ids.len() - 1
    };
    let positives: Vec<usize> = examples.iter().map(|e| intern(&e.target)).collect();
    let own: Vec<Vec<usize>> = examples.iter().map(|e| e.negatives.iter().map(|n| intern(n)).collect()).collect();

    let allowed = (!shared_pool).then(|| {
        own.iter()
            .map(|negs| {
                let mut row = vec![false; item_ids.len()];
                for &p in &positives {
                    row[p] = true;
                }
                for &n in negs {
                    row[n] = true;
                }
                row
            })
            .collect()
    });
    Ok(CandidateLayout { item_ids, positives, allowed })
}

/// Featurize a batch into encoder inputs.
pub fn assemble_batch(
    examples: &[TrainingExample],
    featurizer: &Featurizer,
    shared_pool: bool,
) -> Result<(LossBatch, CandidateLayout), TrainingError> {
    let layout = candidate_layout(examples, shared_pool)?;
    let histories = examples
        .iter()
        .map(|e| {
            Ok(HistoryInput {
                user_id: e.user_id.clone(),
                sessions: featurizer.history_sessions(&e.user_id, &e.prefix)?,
            })
        })
        .collect::<Result<Vec<_>, TrainingError>>()?;
    let candidates = layout
        .item_ids
        .iter()
        .map(|id| {
            let tokens = featurizer.item_tokens(id).ok_or_else(|| RankerError::MissingItemTokens(id.clone()))?;
            Ok(ItemInput { item_id: id.clone(), tokens: tokens.to_vec() })
        })
        .collect::<Result<Vec<_>, TrainingError>>()?;
    let batch =
        LossBatch { histories, candidates, positives: layout.positives.clone(), allowed: layout.allowed.clone() };
    Ok((batch, layout))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(target: &str, negatives: &[&str]) -> TrainingExample {
        TrainingExample {
            user_id: format!("u_{target}"),
            prefix: vec!["p".into()],
            target: target.into(),
            negatives: negatives.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn eighty_candidates_without_collisions() {
        let examples: Vec<TrainingExample> = (0..8)
            .map(|b| {
                let negs: Vec<String> = (0..9).map(|j| format!("n{b}_{j}")).collect();
                let refs: Vec<&str> = negs.iter().map(String::as_str).collect();
                ex(&format!("t{b}"), &refs)
            })
            .collect();
        let layout = candidate_layout(&examples, true).unwrap();
        assert_eq!(layout.len(), 80);
        assert_eq!(layout.positives, (0..8).collect::<Vec<_>>());
        assert_eq!(layout.support(3) - 1, 79);

        let per = candidate_layout(&examples, false).unwrap();
        assert_eq!(per.len(), 80);
        assert_eq!(per.support(3), 8 + 9);
    }

    #[test]
    fn minimal_in_batch() {
        let layout = candidate_layout(&[ex("a", &[]), ex("b", &[])], true).unwrap();
        assert_eq!(layout.item_ids, ["a", "b"]);
        assert_eq!(layout.positives, [0, 1]);
    }

    #[test]
    fn duplicates_collapse() {
        let examples = [ex("a", &["x", "y"]), ex("a", &["y", "b"]), ex("b", &["z"])];
        let layout = candidate_layout(&examples, true).unwrap();
        assert_eq!(layout.item_ids, ["a", "b", "x", "y", "z"]);
        assert_eq!(layout.positives, [0, 0, 1]);
        // candidates = B + B·k − duplicates
        assert_eq!(layout.len(), 3 + 5 - 3);
    }
}
