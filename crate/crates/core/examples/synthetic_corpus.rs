//! Write a seeded synthetic corpus to a directory.
//!
//! `cargo run --example synthetic_corpus -- /tmp/toy [users] [items]`

use textrec::synthetic::{generate, SyntheticConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "toy".to_string());
    let mut config = SyntheticConfig::default();
    if let Some(u) = args.next() {
        config.users = u.parse()?;
    }
    if let Some(i) = args.next() {
        config.items = i.parse()?;
    }
    let corpus = generate(&config);
    std::fs::create_dir_all(&dir)?;
    corpus.write(&dir)?;
    println!(
        "{} interactions over {} items for {} users in {dir}",
        corpus.interactions.len(),
        corpus.items.len(),
        config.users
    );
    Ok(())
}
