mod common;

use std::collections::HashSet;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{toy, toy_model};
use textrec::encoder::{encode_item, Embedding, Parameters};
use textrec::ranker::{
    encode_catalog, evaluate, full_rank, rank_indices, CatalogEmbeddings, EvalOptions, MetricsReport,
};
use textrec::tensor::Matrix;

fn random_catalog(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> CatalogEmbeddings {
    CatalogEmbeddings {
        item_ids: (0..n).map(|i| format!("item{i:03}")).collect(),
        matrix: Matrix::from_vec(n, dim, (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect()),
        fingerprint: String::new(),
    }
}

#[test]
fn catalog_rows_match_isolated_encoding() {
    let toy = toy();
    let params = Parameters::init(&toy_model(toy.featurizer.vocab().len()), 8).unwrap();
    let emb = encode_catalog(&params, &toy.featurizer, &toy.catalog, "fp").unwrap();
    assert_eq!(emb.len(), toy.catalog.len());
    for (i, id) in toy.catalog.item_ids().enumerate() {
        let alone = encode_item(&params, toy.featurizer.item_tokens(id).unwrap(), id).unwrap();
        assert_eq!(emb.matrix.row(i), alone.as_slice(), "row {i}");
    }
}

#[test]
fn sort_matches_pairwise_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ids: Vec<String> = (0..50).map(|i| format!("{:02}", (i * 37) % 50)).collect();
    // Coarse scores so ties are common.
    let scores: Vec<f64> = (0..50).map(|_| rng.gen_range(0..8) as f64 * 0.5).collect();
    let order = rank_indices(&scores, &ids);
    for (pos, &i) in order.iter().enumerate() {
        let ahead = (0..50).filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && ids[j] < ids[i])).count();
        assert_eq!(ahead, pos, "item {} at {pos}", ids[i]);
    }
}

#[test]
fn random_embeddings_give_chance_recall() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let catalog = random_catalog(100, 16, &mut rng);
    let ranks: Vec<usize> = (0..1000)
        .map(|u| {
            let user = Embedding((0..16).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let target = &catalog.item_ids[rng.gen_range(0..100)];
            full_rank(&format!("u{u}"), &user, &catalog, target, &HashSet::new()).unwrap().rank_of_target
        })
        .collect();
    let recall = MetricsReport::from_ranks(&ranks, &[10]).get("Recall@10").unwrap();
    assert!((recall - 0.10).abs() <= 0.05, "Recall@10 {recall}");
}

#[test]
fn three_user_report() {
    let report = MetricsReport::from_ranks(&[1, 5, 30], &[20]);
    assert_eq!(report.users, 3);
    let close = |name: &str, want: f64| {
        let got = report.get(name).unwrap();
        assert!((got - want).abs() < 1e-12, "{name}: {got} vs {want}");
    };
    close("Recall@20", 2.0 / 3.0);
    close("Hit@20", 2.0 / 3.0);
    close("MRR@20", (1.0 + 0.2) / 3.0);
    close("NDCG@20", (1.0 + 1.0 / 6f64.log2()) / 3.0);
}

#[test]
fn evaluation_ignores_example_order() {
    let toy = toy();
    let params = Parameters::init(&toy_model(toy.featurizer.vocab().len()), 4).unwrap();
    let emb = encode_catalog(&params, &toy.featurizer, &toy.catalog, "").unwrap();
    let options = EvalOptions::default();
    let base = evaluate(&params, &toy.featurizer, &emb, &toy.split.test, &options).unwrap();
    let mut shuffled = toy.split.test.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(6));
    let again = evaluate(&params, &toy.featurizer, &emb, &shuffled, &options).unwrap();
    for (name, v) in &base.report.metrics {
        assert!((v - again.report.metrics[name]).abs() < 1e-12, "{name}");
    }
    for r in &again.rankings {
        let original = base.rankings.iter().find(|b| b.user_id == r.user_id).unwrap();
        assert_eq!(original, r);
    }
}

proptest! {
    #[test]
    fn positive_scaling_keeps_rank(seed in 0u64..1000, scale in 0.01f64..100.0, target in 0usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let catalog = random_catalog(40, 8, &mut rng);
        let user: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let scaled = Embedding(user.iter().map(|v| v * scale).collect());
        let t = &catalog.item_ids[target];
        let a = full_rank("u", &Embedding(user), &catalog, t, &HashSet::new()).unwrap();
        let b = full_rank("u", &scaled, &catalog, t, &HashSet::new()).unwrap();
        prop_assert_eq!(a.rank_of_target, b.rank_of_target);
    }

    #[test]
    fn masking_never_worsens_rank(seed in 0u64..1000, masked in prop::collection::hash_set(0usize..30, 0..10)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let catalog = random_catalog(30, 8, &mut rng);
        let user = Embedding((0..8).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let target = &catalog.item_ids[0];
        let mask: HashSet<&str> = masked.iter().map(|&i| catalog.item_ids[i].as_str()).collect();
        let plain = full_rank("u", &user, &catalog, target, &HashSet::new()).unwrap();
        let r = full_rank("u", &user, &catalog, target, &mask).unwrap();
        prop_assert!(r.rank_of_target <= plain.rank_of_target);
        prop_assert_eq!(r.ranked_items.len(), 30 - mask.iter().filter(|m| **m != target.as_str()).count());
    }
}
