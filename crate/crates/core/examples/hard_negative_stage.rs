//! Two-stage training through the pipeline: a random-negative model, then
//! a hard-negative stage initialized from it and mined with it.

use textrec::pipeline::{build_vocabulary, evaluate_model, preprocess, train_model, RunConfig};
use textrec::synthetic::{generate, SyntheticConfig};
use textrec::training::StrategyKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("textrec-hard-stage");
    std::fs::create_dir_all(&dir)?;
    generate(&SyntheticConfig::default()).write(&dir)?;

    let mut config = RunConfig::default();
    config.paths.interactions = dir.join("interactions.tsv");
    config.paths.items = dir.join("items.jsonl");
    config.paths.workdir = dir.join("work");
    for (k, v) in [
        ("verbalize.attributes", "title,follows"),
        ("verbalize.sessions", "2x16"),
        ("train.lr", "1e-3"),
        ("train.total_steps", "150"),
        ("strategy.kind", "random"),
        ("strategy.k", "4"),
    ] {
        config.set(k, v)?;
    }
    preprocess(&config)?;
    build_vocabulary(&config)?;

    let first = train_model(&config, None)?;
    let before = evaluate_model(&config, &first.checkpoint)?;

    config.strategy.kind = StrategyKind::Hard;
    config.strategy.hard_pool_size = 10;
    config.train.total_steps = 100;
    config.hard_lr = 2e-4;
    let second = train_model(&config, Some(&first.checkpoint))?;
    let after = evaluate_model(&config, &second.checkpoint)?;

    for (name, report) in [("random", &before), ("hard", &after)] {
        println!("{name:>7}: NDCG@10 {:.4} Recall@10 {:.4}", report.metrics["NDCG@10"], report.metrics["Recall@10"]);
    }
    println!("artifacts in {}", config.paths.workdir.display());
    Ok(())
}
