//! Train briefly, then write labeled popular/other item embeddings ready
//! for an external 2-D projection.

use textrec::pipeline::{build_vocabulary, export_item_embeddings, preprocess, train_model, RunConfig};
use textrec::synthetic::{generate, SyntheticConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("textrec-export");
    std::fs::create_dir_all(&dir)?;
    generate(&SyntheticConfig { users: 150, items: 80, ..Default::default() }).write(&dir)?;
    let mut config = RunConfig::default();
    config.paths.interactions = dir.join("interactions.tsv");
    config.paths.items = dir.join("items.jsonl");
    config.paths.workdir = dir.join("work");
    config.set("train.total_steps", "60")?;
    config.set("analysis.popular_size", "20")?;
    config.set("analysis.export_per_group", "10")?;

    preprocess(&config)?;
    build_vocabulary(&config)?;
    let trained = train_model(&config, None)?;
    let path = export_item_embeddings(&config, &trained.checkpoint)?;
    let text = std::fs::read_to_string(&path)?;
    for line in text.lines().take(4) {
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.len() > 4 {
            println!("{} {} ... {}", fields[0], fields[1], fields[fields.len() - 1]);
        } else {
            println!("{line}");
        }
    }
    println!("{} rows written to {}", text.lines().count() - 1, path.display());
    Ok(())
}
