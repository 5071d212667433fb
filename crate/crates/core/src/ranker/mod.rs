//! Full-catalog ranking and evaluation.
//!
//! Every test user is scored against every catalog item; there is no
//! candidate sampling. Ties are broken by item id, ascending. History
//! items stay in the candidate list unless `mask_history` is set.

mod metrics;

pub use metrics::{hit_at_k, mrr_at_k, ndcg_at_k, recall_at_k, MetricsReport, DEFAULT_CUTOFFS};

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ItemCatalog, SplitExample};
use crate::encoder::{encode_history, encode_item, Embedding, EncoderError, Parameters};
use crate::tensor::{dot, Matrix};
use crate::verbalize::{Featurizer, VerbalizeError};

#[derive(Debug, Error)]
pub enum RankerError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Verbalize(#[from] VerbalizeError),
    #[error("item {0} has no tokens; check the catalog and vocabulary")]
    MissingItemTokens(String),
    #[error("target item {item_id} of user {user_id} is not in the catalog")]
    UnknownTarget { user_id: String, item_id: String },
    #[error("user embedding has {0} dims, catalog has {1}")]
    DimensionMismatch(usize, usize),
    #[error("cannot evaluate an empty example set")]
    Empty,
    #[error("embedding file: {0}")]
    Io(#[from] std::io::Error),
}

/// Item embeddings in catalog order.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalogEmbeddings {
    pub item_ids: Vec<String>,
    pub matrix: Matrix,
    /// Fingerprint of the checkpoint that produced the rows.
    pub fingerprint: String,
}

impl CatalogEmbeddings {
    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn position(&self, item_id: &str) -> Option<usize> {
        self.item_ids.iter().position(|i| i == item_id)
    }
}

/// Encode every catalog item. Items are independent, so this runs in
/// parallel; row order always follows the catalog.
pub fn encode_catalog(
    params: &Parameters,
    featurizer: &Featurizer,
    catalog: &ItemCatalog,
    fingerprint: &str,
) -> Result<CatalogEmbeddings, RankerError> {
    let rows: Vec<Embedding> = catalog
        .items()
        .par_iter()
        .map(|item| {
            let tokens = featurizer
                .item_tokens(&item.item_id)
                .ok_or_else(|| RankerError::MissingItemTokens(item.item_id.clone()))?;
            Ok(encode_item(params, tokens, &item.item_id)?)
        })
        .collect::<Result<_, RankerError>>()?;
    let d = params.config().hidden_dim;
    let mut data = Vec::with_capacity(rows.len() * d);
    for r in &rows {
        data.extend_from_slice(r.as_slice());
    }
    Ok(CatalogEmbeddings {
        item_ids: catalog.item_ids().map(str::to_string).collect(),
        matrix: Matrix::from_vec(rows.len(), d, data),
        fingerprint: fingerprint.to_string(),
    })
}

/// Dot-product score of `user` against every catalog row.
pub fn score_catalog(user: &Embedding, catalog: &CatalogEmbeddings) -> Result<Vec<f64>, RankerError> {
    if user.dim() != catalog.dim() {
        return Err(RankerError::DimensionMismatch(user.dim(), catalog.dim()));
    }
    Ok((0..catalog.len()).map(|r| dot(user.as_slice(), catalog.matrix.row(r))).collect())
}

/// Catalog row indices by descending score, ties by ascending item id.
pub fn rank_indices(scores: &[f64], item_ids: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| item_ids[a].cmp(&item_ids[b])));
    order
}

/// A user's full ranked catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub user_id: String,
    pub ranked_items: Vec<String>,
    /// 1-based.
    pub rank_of_target: usize,
}

/// Rank the whole catalog for one user. Items in `masked` are removed
/// from the list (the target never is).
pub fn full_rank(
    user_id: &str,
    user: &Embedding,
    catalog: &CatalogEmbeddings,
    target: &str,
    masked: &HashSet<&str>,
) -> Result<RankingResult, RankerError> {
    let scores = score_catalog(user, catalog)?;
    let ranked_items: Vec<String> = rank_indices(&scores, &catalog.item_ids)
        .into_iter()
        .map(|i| catalog.item_ids[i].clone())
        .filter(|id| id == target || !masked.contains(id.as_str()))
        .collect();
    let rank_of_target = ranked_items
        .iter()
        .position(|id| id == target)
        .map(|p| p + 1)
        .ok_or_else(|| RankerError::UnknownTarget { user_id: user_id.to_string(), item_id: target.to_string() })?;
    Ok(RankingResult { user_id: user_id.to_string(), ranked_items, rank_of_target })
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub cutoffs: Vec<usize>,
    pub mask_history: bool,
    /// How many top items to keep per user for downstream analysis.
    pub keep_top: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { cutoffs: DEFAULT_CUTOFFS.to_vec(), mask_history: false, keep_top: 20 }
    }
}

/// Per-user outcome with a truncated top list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRanking {
    pub user_id: String,
    pub target: String,
    pub rank_of_target: usize,
    pub top_items: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub rankings: Vec<UserRanking>,
}

/// Rank the full catalog for each example's prefix and average metrics.
pub fn evaluate(
    params: &Parameters,
    featurizer: &Featurizer,
    catalog: &CatalogEmbeddings,
    examples: &[SplitExample],
    options: &EvalOptions,
) -> Result<Evaluation, RankerError> {
    if examples.is_empty() {
        return Err(RankerError::Empty);
    }
    if let Some(e) = examples.iter().find(|e| catalog.position(&e.target).is_none()) {
        return Err(RankerError::UnknownTarget { user_id: e.user_id.clone(), item_id: e.target.clone() });
    }
    let rankings: Vec<UserRanking> = examples
        .par_iter()
        .map(|e| {
            let batch = featurizer.history_sessions(&e.user_id, &e.prefix)?;
            let user = encode_history(params, &batch, &e.user_id)?;
            let masked: HashSet<&str> =
                if options.mask_history { e.prefix.iter().map(String::as_str).collect() } else { HashSet::new() };
            let r = full_rank(&e.user_id, &user, catalog, &e.target, &masked)?;
            Ok(UserRanking {
                user_id: e.user_id.clone(),
                target: e.target.clone(),
                rank_of_target: r.rank_of_target,
                top_items: r.ranked_items.into_iter().take(options.keep_top).collect(),
            })
        })
        .collect::<Result<_, RankerError>>()?;
    let ranks: Vec<usize> = rankings.iter().map(|r| r.rank_of_target).collect();
    Ok(Evaluation { report: MetricsReport::from_ranks(&ranks, &options.cutoffs), rankings })
}

/// `N D` header, then `item_id v1 .. vD [label]` per row.
pub fn embeddings_to_text(ids: &[String], matrix: &Matrix, labels: Option<&[String]>) -> String {
    let mut out = format!("{} {}\n", ids.len(), matrix.cols());
    for (r, id) in ids.iter().enumerate() {
        out.push_str(id);
        for v in matrix.row(r) {
            let _ = write!(out, " {v:e}");
        }
        if let Some(labels) = labels {
            out.push(' ');
            out.push_str(&labels[r]);
        }
        out.push('\n');
    }
    out
}

pub fn write_embeddings(path: impl AsRef<Path>, catalog: &CatalogEmbeddings) -> Result<(), RankerError> {
    fs::write(path, embeddings_to_text(&catalog.item_ids, &catalog.matrix, None))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog(ids: &[&str], rows: Vec<Vec<f64>>) -> CatalogEmbeddings {
        let d = rows[0].len();
        CatalogEmbeddings {
            item_ids: ids.iter().map(|s| s.to_string()).collect(),
            matrix: Matrix::from_vec(rows.len(), d, rows.concat()),
            fingerprint: String::new(),
        }
    }

    #[test]
    fn sorts_by_score_then_id() {
        let c = catalog(&["a", "b", "c"], vec![vec![0.9], vec![0.1], vec![0.5]]);
        let r = full_rank("u", &Embedding(vec![1.0]), &c, "b", &HashSet::new()).unwrap();
        assert_eq!(r.ranked_items, ["a", "c", "b"]);
        assert_eq!(r.rank_of_target, 3);

        let c = catalog(&["z", "y"], vec![vec![1.0], vec![1.0]]);
        let r = full_rank("u", &Embedding(vec![1.0]), &c, "z", &HashSet::new()).unwrap();
        assert_eq!(r.ranked_items, ["y", "z"]);
    }

    #[test]
    fn masking_removes_history_but_not_target() {
        let c = catalog(&["a", "b", "c"], vec![vec![3.0], vec![2.0], vec![1.0]]);
        let masked: HashSet<&str> = ["a", "c"].into_iter().collect();
        let r = full_rank("u", &Embedding(vec![1.0]), &c, "c", &masked).unwrap();
        assert_eq!(r.ranked_items, ["b", "c"]);
        assert_eq!(r.rank_of_target, 2);
    }

    #[test]
    fn errors() {
        let c = catalog(&["a"], vec![vec![1.0, 0.0]]);
        assert!(matches!(
            full_rank("u", &Embedding(vec![1.0]), &c, "a", &HashSet::new()),
            Err(RankerError::DimensionMismatch(1, 2))
        ));
        assert!(matches!(
            full_rank("u", &Embedding(vec![1.0, 0.0]), &c, "zz", &HashSet::new()),
            Err(RankerError::UnknownTarget { .. })
        ));
    }

    #[test]
    fn export_format() {
        let c = catalog(&["a", "b"], vec![vec![0.5, 1.0], vec![-2.0, 0.0]]);
        let text = embeddings_to_text(&c.item_ids, &c.matrix, Some(&["popular".into(), "other".into()]));
        assert_eq!(text, "2 2\na 5e-1 1e0 popular\nb -2e0 0e0 other\n");
    }
}
