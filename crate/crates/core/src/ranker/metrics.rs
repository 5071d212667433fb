//! Single-label cutoff metrics over a 1-based target rank.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub fn recall_at_k(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0
    } else {
        0.0
    }
}

/// Identical to recall with one relevant item per user.
pub fn hit_at_k(rank: usize, k: usize) -> f64 {
    recall_at_k(rank, k)
}

/// `1 / log2(rank + 1)` inside the cutoff; the ideal DCG is 1.
pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

pub fn mrr_at_k(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0 / rank as f64
    } else {
        0.0
    }
}

pub const DEFAULT_CUTOFFS: [usize; 2] = [10, 20];

/// Macro-averaged metrics keyed `Recall@K`, `NDCG@K`, `MRR@K`, `Hit@K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metrics: BTreeMap<String, f64>,
    pub users: usize,
}

impl MetricsReport {
    /// An empty rank list gives an empty metric map with zero users.
    pub fn from_ranks(ranks: &[usize], cutoffs: &[usize]) -> Self {
        let mut metrics = BTreeMap::new();
        if !ranks.is_empty() {
            let n = ranks.len() as f64;
            let mean = |f: fn(usize, usize) -> f64, k: usize| ranks.iter().map(|&r| f(r, k)).sum::<f64>() / n;
            for &k in cutoffs {
                metrics.insert(format!("Recall@{k}"), mean(recall_at_k, k));
                metrics.insert(format!("NDCG@{k}"), mean(ndcg_at_k, k));
                metrics.insert(format!("MRR@{k}"), mean(mrr_at_k, k));
                metrics.insert(format!("Hit@{k}"), mean(hit_at_k, k));
            }
        }
        MetricsReport { metrics, users: ranks.len() }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        assert_eq!(ndcg_at_k(1, 10), 1.0);
        assert_eq!(ndcg_at_k(3, 10), 0.5);
        assert_eq!(ndcg_at_k(11, 10), 0.0);
        assert_eq!(recall_at_k(10, 10), 1.0);
        assert_eq!(recall_at_k(21, 20), 0.0);
        assert_eq!(mrr_at_k(1, 10), 1.0);
        assert_eq!(mrr_at_k(4, 10), 0.25);
        assert_eq!(mrr_at_k(11, 10), 0.0);
    }

    #[test]
    fn mean_recall_over_fixture() {
        let r = MetricsReport::from_ranks(&[1, 5, 30], &[20]);
        assert!((r.get("Recall@20").unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.get("Hit@20"), r.get("Recall@20"));
        assert_eq!(r.users, 3);
    }

    #[test]
    fn perfect_model() {
        let r = MetricsReport::from_ranks(&[1; 7], &DEFAULT_CUTOFFS);
        assert!(r.metrics.values().all(|&v| v == 1.0));
        assert_eq!(r.metrics.len(), 8);
    }

    #[test]
    fn empty_group() {
        let r = MetricsReport::from_ranks(&[], &DEFAULT_CUTOFFS);
        assert!(r.metrics.is_empty());
        assert_eq!(r.users, 0);
    }
}
