//! Full-catalog ranking with fixed embeddings and the cutoff metrics it
//! feeds.

use std::collections::HashSet;

use textrec::encoder::Embedding;
use textrec::ranker::{full_rank, CatalogEmbeddings, MetricsReport};
use textrec::tensor::Matrix;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ids: Vec<String> = ["apple", "boat", "car", "drum", "egg"].iter().map(|s| s.to_string()).collect();
    let catalog = CatalogEmbeddings {
        item_ids: ids,
        matrix: Matrix::from_vec(5, 2, vec![1.0, 0.0, 0.8, 0.6, 0.0, 1.0, -1.0, 0.0, 0.6, 0.8]),
        fingerprint: String::new(),
    };
    let users = [
        ("u1", [1.0, 0.1], "apple", vec![]),
        ("u2", [0.2, 1.0], "egg", vec!["car"]),
        ("u3", [-1.0, 0.0], "boat", vec![]),
    ];
    let mut ranks = Vec::new();
    for (user, vec, target, history) in users {
        let masked: HashSet<&str> = history.into_iter().collect();
        let r = full_rank(user, &Embedding(vec.to_vec()), &catalog, target, &masked)?;
        println!("{user}: {:?}  target {target} at rank {}", r.ranked_items, r.rank_of_target);
        ranks.push(r.rank_of_target);
    }
    let report = MetricsReport::from_ranks(&ranks, &[1, 3]);
    for (name, v) in &report.metrics {
        println!("{name:<10} {v:.4}");
    }
    Ok(())
}
