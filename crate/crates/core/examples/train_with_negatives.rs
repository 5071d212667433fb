//! Train on the synthetic corpus with a chosen negative strategy and
//! report training-target Recall@1.
//!
//! `cargo run --release --example train_with_negatives -- [random|popular|inbatch] [steps]`

use textrec::corpus::{build_histories, full_histories, k_core_filter, leave_one_out_split, ItemCatalog};
use textrec::encoder::{IdFusion, ModelConfig, Parameters};
use textrec::ranker::{encode_catalog, evaluate, EvalOptions};
use textrec::synthetic::{generate, SyntheticConfig};
use textrec::training::{
    build_popular_set, popularity_occurrences, train, NegativeStrategy, PopularityBasis, StrategyKind, TrainConfig,
    TrainingData,
};
use textrec::verbalize::{build_vocab, vocabulary_texts, Featurizer, SessionGeometry, VerbalizeConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let kind: StrategyKind = args.next().as_deref().unwrap_or("random").parse()?;
    let steps: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(300);

    let corpus = generate(&SyntheticConfig::default());
    let records = k_core_filter(&corpus.interactions, 5)?;
    let catalog = ItemCatalog::new(corpus.items).restrict_to(&records)?;
    let split = leave_one_out_split(&build_histories(&records))?;
    let histories = full_histories(&split);
    let config = VerbalizeConfig::with_attributes(["title", "follows"]);
    let texts = vocabulary_texts(catalog.items(), &config, &[]);
    let vocab = build_vocab(&texts, 1000)?;
    let featurizer = Featurizer::new(&catalog, config, vocab.clone(), SessionGeometry::new(2, 16), 32)?;

    let model = ModelConfig {
        vocab_size: vocab.len(),
        hidden_dim: 32,
        num_heads: 4,
        ffn_dim: 64,
        encoder_layers: 2,
        decoder_layers: 1,
        max_session_len: 32,
        dropout_rate: 0.0,
        id_fusion: IdFusion::Off,
    };
    let mut strategy = NegativeStrategy::of_kind(kind);
    if kind != StrategyKind::InbatchOnly {
        strategy.negatives_per_example = 4;
        strategy.popular_set_size = 10;
    }
    let train_config = TrainConfig { total_steps: steps, learning_rate: 1e-3, ..TrainConfig::default() };
    let data = TrainingData {
        examples: &split.train,
        featurizer: &featurizer,
        catalog: &catalog,
        histories: &histories,
        popular: build_popular_set(popularity_occurrences(&split, PopularityBasis::FullDataset), 10),
        hard_pools: None,
    };
    let out = train(&train_config, &strategy, &data, Parameters::init(&model, 1)?, |log| {
        if log.step % 50 == 0 {
            println!("step {:>4}  lr {:.2e}  loss {:.4}", log.step, log.lr, log.loss);
        }
    })?;

    let emb = encode_catalog(&out.params, &featurizer, &catalog, "")?;
    let options = EvalOptions { cutoffs: vec![1, 10], ..EvalOptions::default() };
    let eval = evaluate(&out.params, &featurizer, &emb, &split.train, &options)?;
    println!("{kind}: {:?}", eval.report.metrics);
    Ok(())
}
