//! Render items and a user history as text, build the vocabulary and cut
//! the history into fixed-size sessions.

use textrec::corpus::{build_histories, k_core_filter, leave_one_out_split, ItemCatalog};
use textrec::synthetic::{generate, SyntheticConfig};
use textrec::verbalize::{build_vocab, vocabulary_texts, Featurizer, SessionGeometry, VerbalizeConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate(&SyntheticConfig::default());
    let records = k_core_filter(&corpus.interactions, 5)?;
    let catalog = ItemCatalog::new(corpus.items).restrict_to(&records)?;
    let split = leave_one_out_split(&build_histories(&records))?;

    let config = VerbalizeConfig::with_attributes(["title", "follows"]);
    let texts = vocabulary_texts(catalog.items(), &config, &[]);
    println!("item text:    {}", texts[0]);
    let vocab = build_vocab(&texts, 1000)?;
    println!("vocabulary:   {} tokens", vocab.len());

    let featurizer = Featurizer::new(&catalog, config, vocab, SessionGeometry::new(2, 16), 32)?;
    let example = &split.test[0];
    println!("history text: {}", featurizer.history_text(&example.user_id, &example.prefix)?);
    let sessions = featurizer.history_sessions(&example.user_id, &example.prefix)?;
    for (i, (s, mask)) in sessions.sessions().iter().zip(sessions.attention_mask()).enumerate() {
        let words: Vec<&str> =
            s.iter().zip(mask).filter(|(_, &m)| m).map(|(&t, _)| featurizer.vocab().token(t).unwrap_or("?")).collect();
        println!("session {i}:    {}", words.join(" "));
    }
    println!("target:       {}", featurizer.item_text(&example.target).unwrap_or(""));
    Ok(())
}
