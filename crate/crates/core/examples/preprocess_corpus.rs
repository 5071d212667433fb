//! Ingest interactions, apply the date window and the k-core filter, then
//! split each history leave-one-out.
//!
//! `cargo run --example preprocess_corpus -- interactions.tsv [min_count]`
//! With no arguments a synthetic corpus is used.

use textrec::corpus::{
    build_histories, corpus_stats, date_filter, ingest_interactions, k_core_filter, leave_one_out_split,
};
use textrec::synthetic::{generate, SyntheticConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let records = match args.next() {
        Some(path) => ingest_interactions(path)?,
        None => generate(&SyntheticConfig { users: 200, items: 60, ..Default::default() }).interactions,
    };
    let min_count: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(5);

    let lo = records.iter().map(|r| r.timestamp).min().unwrap_or(0);
    let hi = records.iter().map(|r| r.timestamp).max().unwrap_or(0);
    let windowed = date_filter(&records, lo, hi)?;
    let filtered = k_core_filter(&windowed, min_count)?;
    let histories = build_histories(&filtered);
    let split = leave_one_out_split(&histories)?;
    let stats = corpus_stats(&filtered, &split);

    println!("raw records     {}", records.len());
    println!("after {min_count}-core    {}", filtered.len());
    println!("{stats:#?}");
    println!(
        "train = actions - 3 * users: {} = {} - 3 * {} ({})",
        stats.train,
        stats.actions,
        stats.users,
        stats.split_identity_holds()
    );
    if let Some(e) = split.test.first() {
        println!("test example for {}: {} history items -> {}", e.user_id, e.prefix.len(), e.target);
    }
    Ok(())
}
