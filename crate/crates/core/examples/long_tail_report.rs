//! Popularity diagnostics on a trained toy model: long-tail split, grouped
//! metrics, popular ratio and text diversity of the recommendations.

use std::collections::HashSet;

use textrec::analysis::{bleu4, dist_n, grouped_metrics, item_frequency, popular_ratio, tail_split_by_ratio};
use textrec::encoder::load_checkpoint;
use textrec::pipeline::{build_vocabulary, preprocess, train_model, RunConfig, Workspace};
use textrec::ranker::{encode_catalog, evaluate, EvalOptions};
use textrec::synthetic::{generate, SyntheticConfig};
use textrec::training::{build_popular_set, popularity_occurrences, PopularityBasis};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("textrec-long-tail");
    std::fs::create_dir_all(&dir)?;
    generate(&SyntheticConfig { users: 120, items: 40, skew: 1.2, ..Default::default() }).write(&dir)?;
    let text = format!(
        "paths.interactions = {0}/interactions.tsv\npaths.items = {0}/items.jsonl\npaths.workdir = {0}/work\n\
         verbalize.attributes = title,follows\nverbalize.sessions = 2x16\ntrain.lr = 1e-3\n\
         train.total_steps = 120\nstrategy.kind = random\nstrategy.k = 4\n",
        dir.display()
    );
    let config = RunConfig::parse(&text)?;
    preprocess(&config)?;
    build_vocabulary(&config)?;
    let trained = train_model(&config, None)?;

    let ws = Workspace::load(&config)?;
    let params = load_checkpoint(&trained.checkpoint)?.params;
    let emb = encode_catalog(&params, &ws.featurizer, &ws.catalog, "")?;
    let eval = evaluate(&params, &ws.featurizer, &emb, &ws.split.test, &EvalOptions::default())?;

    let freq = item_frequency(&ws.split.train, &ws.catalog);
    let split = tail_split_by_ratio(&freq, 0.2)?;
    println!(
        "threshold {}: {} long-tail / {} head items (ratio {:.3})",
        split.threshold,
        split.long_tail.len(),
        split.head.len(),
        split.achieved_ratio
    );
    let grouped = grouped_metrics(&eval.rankings, &split, &[10]);
    println!("long-tail users {} NDCG@10 {:?}", grouped.long_tail.users, grouped.long_tail.get("NDCG@10"));
    println!("head users      {} NDCG@10 {:?}", grouped.head.users, grouped.head.get("NDCG@10"));

    let popular = build_popular_set(popularity_occurrences(&ws.split, PopularityBasis::TrainTargets), 10);
    let popular: HashSet<&str> = popular.iter().map(String::as_str).collect();
    let tops: Vec<Vec<String>> = eval.rankings.iter().map(|r| r.top_items.clone()).collect();
    println!("popular ratio in top-5: {:.3}", popular_ratio(&tops, &popular, 5)?);

    let text_of = |id: &str| ws.featurizer.item_text(id).unwrap_or("").to_string();
    let per_user: Vec<Vec<String>> = tops.iter().map(|t| t.iter().take(5).map(|id| text_of(id)).collect()).collect();
    let bleu_input: Vec<(String, Vec<String>, String)> = eval
        .rankings
        .iter()
        .zip(&per_user)
        .map(|(r, texts)| (r.user_id.clone(), texts.clone(), text_of(&r.target)))
        .collect();
    println!(
        "dist-1 {:.3} dist-2 {:.3} bleu-4 {:.4}",
        dist_n(&per_user, 1)?,
        dist_n(&per_user, 2)?,
        bleu4(&bleu_input)?
    );
    Ok(())
}
