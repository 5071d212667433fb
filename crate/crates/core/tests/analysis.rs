use std::collections::HashSet;

use proptest::prelude::*;
use textrec::analysis::{
    bleu4, dist_n, grouped_metrics, select_export_items, sentence_bleu4, tail_split_by_ratio, FrequencyTable,
};
use textrec::ranker::UserRanking;

fn table(counts: &[usize]) -> FrequencyTable {
    FrequencyTable { item_ids: (0..counts.len()).map(|i| format!("i{i}")).collect(), counts: counts.to_vec() }
}

fn ranking(user: &str, target: &str, rank: usize) -> UserRanking {
    UserRanking { user_id: user.into(), target: target.into(), rank_of_target: rank, top_items: Vec::new() }
}

#[test]
fn ratio_split_on_counts_zero_to_nine() {
    let split = tail_split_by_ratio(&table(&(0..10).collect::<Vec<_>>()), 0.2).unwrap();
    assert_eq!(split.threshold, 1);
    assert_eq!(split.long_tail, ["i0", "i1"].iter().map(|s| s.to_string()).collect());
    assert_eq!(split.achieved_ratio, 0.2);

    let flat = tail_split_by_ratio(&table(&[0; 6]), 0.2).unwrap();
    assert_eq!((flat.threshold, flat.achieved_ratio, flat.head.len()), (0, 1.0, 0));
}

#[test]
fn grouped_metrics_match_hand_partition() {
    // i0, i1 long-tail; i2..i4 head.
    let split = tail_split_by_ratio(&table(&[0, 1, 5, 6, 7]), 0.4).unwrap();
    assert_eq!(split.threshold, 1);
    let rankings = vec![
        ranking("a", "i0", 1),
        ranking("b", "i3", 4),
        ranking("c", "i1", 12),
        ranking("d", "i2", 2),
        ranking("e", "i4", 30),
    ];
    let g = grouped_metrics(&rankings, &split, &[10]);
    assert_eq!((g.long_tail.users, g.head.users), (2, 3));
    let tail_ndcg = (1.0 + 0.0) / 2.0;
    let head_ndcg = (1.0 / 5f64.log2() + 1.0 / 3f64.log2() + 0.0) / 3.0;
    assert!((g.long_tail.get("NDCG@10").unwrap() - tail_ndcg).abs() < 1e-12);
    assert!((g.head.get("NDCG@10").unwrap() - head_ndcg).abs() < 1e-12);
    assert!((g.head.get("Recall@10").unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(g.long_tail.get("MRR@10").unwrap(), 0.5);

    let all_tail = grouped_metrics(&rankings[..1], &split, &[10]);
    assert_eq!(all_tail.head.users, 0);
    assert!(all_tail.head.metrics.is_empty());
}

#[test]
fn export_selection_is_seeded_and_labeled() {
    let ids: Vec<String> = (0..120).map(|i| format!("{i}")).collect();
    let popular: HashSet<&str> = ids[..70].iter().map(String::as_str).collect();
    let a = select_export_items(&ids, &popular, 50, 4).unwrap();
    assert_eq!(a, select_export_items(&ids, &popular, 50, 4).unwrap());
    assert_eq!(a.iter().filter(|(_, l)| *l == "popular").count(), 50);
    assert_eq!(a.iter().filter(|(_, l)| *l == "other").count(), 50);
    assert!(a.iter().all(|(id, l)| (*l == "popular") == popular.contains(id.as_str())));
    assert!(select_export_items(&ids, &HashSet::new(), 50, 4).is_err());
}

#[test]
fn empty_gold_text_is_an_error() {
    assert!(bleu4(&[("u".to_string(), vec!["a b"], String::new())]).is_err());
    assert_eq!(sentence_bleu4(&[], &["a", "b"]), 0.0);
}

proptest! {
    #[test]
    fn ratio_split_is_smallest_reaching_threshold(
        counts in prop::collection::vec(0usize..15, 1..40),
        fraction in 0.05f64..0.95,
    ) {
        let freq = table(&counts);
        let split = tail_split_by_ratio(&freq, fraction).unwrap();
        prop_assert_eq!(split.long_tail.len() + split.head.len(), counts.len());
        let tail = |t: usize| counts.iter().filter(|&&c| c <= t).count() as f64 / counts.len() as f64;
        prop_assert!(tail(split.threshold) + 1e-12 >= fraction);
        if split.threshold > 0 {
            prop_assert!(tail(split.threshold - 1) < fraction);
        }
    }

    #[test]
    fn text_metrics_stay_in_unit_interval(
        words in prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]), 1..12),
        gold in prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "x"]), 1..8),
    ) {
        let b = sentence_bleu4(&words, &gold);
        prop_assert!((0.0..=1.0).contains(&b));
        let d = dist_n(&[vec![words.join(" ")]], 2).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
    }
}
