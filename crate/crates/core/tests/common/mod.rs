//! Shared fixtures and oracles for the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textrec::encoder::{backward, forward_loss, HistoryInput, IdFusion, ItemInput, LossBatch, ModelConfig, Parameters};
use textrec::verbalize::split_sessions;

/// d=8, one encoder and one decoder layer, m=4, vocabulary of 50.
pub fn gradient_check_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 50,
        hidden_dim: 8,
        num_heads: 2,
        ffn_dim: 16,
        encoder_layers: 1,
        decoder_layers: 1,
        max_session_len: 4,
        dropout_rate: 0.0,
        id_fusion: IdFusion::Off,
    }
}

/// Two users with two sessions each (one partly padded), three candidates.
pub fn gradient_check_batch() -> LossBatch {
    let history = |tokens: &[u32], user: &str| HistoryInput {
        user_id: user.into(),
        sessions: split_sessions(tokens, 2, 4).unwrap(),
    };
    let item = |id: &str, tokens: &[u32]| ItemInput { item_id: id.into(), tokens: tokens.to_vec() };
    LossBatch {
        histories: vec![history(&[3, 7, 9, 11, 13, 4], "u1"), history(&[5, 6, 8, 10, 12, 14, 16, 18], "u2")],
        candidates: vec![item("a", &[3, 20, 21]), item("b", &[5, 22]), item("c", &[7, 23, 24, 25])],
        positives: vec![0, 2],
        allowed: None,
    }
}

pub struct GradientCheck {
    pub max_relative_error: f64,
    pub coordinates: usize,
}

/// Central differences on `samples` random coordinates drawn from tensors
/// the loss actually touches. Relative error is
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-6)`.
pub fn finite_difference_check(
    params: &Parameters,
    batch: &LossBatch,
    step: f64,
    samples: usize,
    seed: u64,
) -> GradientCheck {
    let pass = forward_loss(params, batch).unwrap();
    let grads = backward(params, &pass);
    drop(pass);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let tensors = params.tensors().len();
    while checked < samples {
        let t = rng.gen_range(0..tensors);
        let len = params.tensors()[t].len();
        let i = rng.gen_range(0..len);
        let analytic = grads.tensors[t].as_slice()[i];
        let original = params.tensors()[t].as_slice()[i];

        probe.tensors_mut()[t].as_mut_slice()[i] = original + step;
        let plus = forward_loss(&probe, batch).unwrap().loss();
        probe.tensors_mut()[t].as_mut_slice()[i] = original - step;
        let minus = forward_loss(&probe, batch).unwrap().loss();
        probe.tensors_mut()[t].as_mut_slice()[i] = original;

        let numeric = (plus - minus) / (2.0 * step);
        let denom = analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic - numeric).abs() / denom);
        checked += 1;
    }
    GradientCheck { max_relative_error: worst, coordinates: checked }
}

use std::collections::HashMap;
use std::path::Path;

use textrec::corpus::{build_histories, full_histories, k_core_filter, leave_one_out_split, DatasetSplit, ItemCatalog};
use textrec::pipeline::RunConfig;
use textrec::synthetic::{generate, SyntheticConfig};
use textrec::verbalize::{build_vocab, vocabulary_texts, Featurizer, SessionGeometry, VerbalizeConfig};

/// The default synthetic corpus after 5-core filtering and splitting.
pub struct Toy {
    pub split: DatasetSplit,
    pub catalog: ItemCatalog,
    pub featurizer: Featurizer,
    pub histories: HashMap<String, Vec<String>>,
}

pub fn toy() -> Toy {
    let corpus = generate(&SyntheticConfig::default());
    let records = k_core_filter(&corpus.interactions, 5).unwrap();
    let catalog = ItemCatalog::new(corpus.items).restrict_to(&records).unwrap();
    let split = leave_one_out_split(&build_histories(&records)).unwrap();
    let verbalize = VerbalizeConfig::with_attributes(["title", "follows"]);
    let texts = vocabulary_texts(catalog.items(), &verbalize, &[]);
    let vocab = build_vocab(&texts, 1000).unwrap();
    let featurizer = Featurizer::new(&catalog, verbalize, vocab, SessionGeometry::new(2, 16), 32).unwrap();
    let histories = full_histories(&split);
    Toy { split, catalog, featurizer, histories }
}

/// d=32, 4 heads, 2 encoder layers, 1 decoder layer.
pub fn toy_model(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        vocab_size,
        hidden_dim: 32,
        num_heads: 4,
        ffn_dim: 64,
        encoder_layers: 2,
        decoder_layers: 1,
        max_session_len: 32,
        dropout_rate: 0.0,
        id_fusion: IdFusion::Off,
    }
}

/// Write the synthetic corpus into `dir` and return a matching run config.
pub fn toy_run_config(dir: &Path, steps: usize) -> RunConfig {
    generate(&SyntheticConfig::default()).write(dir).unwrap();
    let text = format!(
        "paths.interactions = {}\npaths.items = {}\npaths.workdir = {}\n\
         verbalize.attributes = title,follows\nverbalize.sessions = 2x16\n\
         train.lr = 1e-3\ntrain.total_steps = {steps}\nstrategy.kind = random\nstrategy.k = 4\n",
        dir.join("interactions.tsv").display(),
        dir.join("items.jsonl").display(),
        dir.join("work").display(),
    );
    RunConfig::parse(&text).unwrap()
}
