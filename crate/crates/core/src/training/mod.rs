//! Contrastive dual-encoder training.
//!
//! Each step draws a batch of examples, samples negatives per example,
//! builds one deduplicated candidate list, and minimises the mean softmax
//! cross-entropy of each target against it with Adam.

mod batch;
mod negatives;
mod optim;

pub use batch::{assemble_batch, candidate_layout, CandidateLayout, TrainingExample};
pub use negatives::{
    build_popular_set, exclusion_set, mine_hard_negatives, popularity_occurrences, sample_popular_negatives,
    sample_random_negatives, PopularityBasis,
};
pub use optim::{clip_gradients, lr_schedule, warmup_steps, Adam, AdamConfig};

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ItemCatalog, SplitExample};
use crate::encoder::{backward, forward_loss, forward_loss_training, EncoderError, Parameters};
use crate::ranker::{encode_catalog, RankerError};
use crate::verbalize::{Featurizer, VerbalizeError};

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("only {available} candidates remain after exclusions, {requested} requested")]
    InsufficientCandidates { available: usize, requested: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("the hard strategy needs mined negative pools")]
    MissingHardPools,
    #[error("{pools} hard pools for {examples} examples")]
    HardPoolMismatch { pools: usize, examples: usize },
    #[error("cannot train on an empty split")]
    EmptySplit,
    #[error("cannot assemble an empty batch")]
    EmptyBatch,
    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: usize, loss: f64 },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Verbalize(#[from] VerbalizeError),
    #[error(transparent)]
    Ranker(#[from] RankerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    InbatchOnly,
    Random,
    Popular,
    Hard,
}

impl std::str::FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inbatch_only" | "inbatch" => Ok(StrategyKind::InbatchOnly),
            "random" => Ok(StrategyKind::Random),
            "popular" => Ok(StrategyKind::Popular),
            "hard" => Ok(StrategyKind::Hard),
            other => Err(format!("unknown strategy {other:?}")),
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StrategyKind::InbatchOnly => "inbatch_only",
            StrategyKind::Random => "random",
            StrategyKind::Popular => "popular",
            StrategyKind::Hard => "hard",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeStrategy {
    pub kind: StrategyKind,
    pub negatives_per_example: usize,
    pub popular_set_size: usize,
    pub hard_pool_size: usize,
    pub popularity_basis: PopularityBasis,
    /// Every example ranks against all batch candidates. When off, an
    /// example sees only in-batch positives and its own negatives.
    pub shared_pool: bool,
    /// Re-mine hard pools every this many steps.
    pub remine_every: Option<usize>,
}

impl Default for NegativeStrategy {
    fn default() -> Self {
        NegativeStrategy {
            kind: StrategyKind::Random,
            negatives_per_example: 9,
            popular_set_size: 500,
            hard_pool_size: 100,
            popularity_basis: PopularityBasis::FullDataset,
            shared_pool: true,
            remine_every: None,
        }
    }
}

impl NegativeStrategy {
    pub fn of_kind(kind: StrategyKind) -> Self {
        NegativeStrategy {
            kind,
            negatives_per_example: if kind == StrategyKind::InbatchOnly { 0 } else { 9 },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainingError> {
        let k = self.negatives_per_example;
        let bad = |msg: String| Err(TrainingError::InvalidConfig(msg));
        match self.kind {
            StrategyKind::InbatchOnly if k != 0 => bad("inbatch_only samples no negatives; set k = 0".into()),
            StrategyKind::Popular if self.popular_set_size < k => {
                bad(format!("popular set of {} cannot supply {k} negatives", self.popular_set_size))
            }
            StrategyKind::Hard if self.hard_pool_size < k => {
                bad(format!("hard pool of {} cannot supply {k} negatives", self.hard_pool_size))
            }
            _ if self.remine_every == Some(0) => bad("remine_every must be positive".into()),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_proportion: f64,
    pub total_steps: usize,
    pub seed: u64,
    pub adam: AdamSettings,
    pub gradient_clip_norm: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamSettings {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<AdamSettings> for AdamConfig {
    fn from(s: AdamSettings) -> Self {
        AdamConfig { beta1: s.beta1, beta2: s.beta2, eps: s.eps }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            batch_size: 8,
            learning_rate: 1e-4,
            warmup_proportion: 0.1,
            total_steps: 1000,
            seed: 0,
            adam: AdamSettings { beta1: adam.beta1, beta2: adam.beta2, eps: adam.eps },
            gradient_clip_norm: Some(1.0),
        }
    }
}

impl TrainConfig {
    /// Second-stage settings for training on mined hard negatives.
    pub fn hard_negative_stage(mut self) -> Self {
        self.learning_rate = 5e-5;
        self.warmup_proportion = 0.0;
        self
    }

    pub fn validate(&self, strategy: &NegativeStrategy) -> Result<(), TrainingError> {
        let bad = |msg: &str| Err(TrainingError::InvalidConfig(msg.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if strategy.kind == StrategyKind::InbatchOnly && self.batch_size < 2 {
            return bad("in-batch negatives need batch_size >= 2");
        }
        if !(0.0..=1.0).contains(&self.warmup_proportion) {
            return bad("warmup_proportion must lie in [0, 1]");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning rate must be finite and non-negative");
        }
        if matches!(self.gradient_clip_norm, Some(c) if !(c > 0.0)) {
            return bad("gradient_clip_norm must be positive");
        }
        strategy.validate()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

/// RNG purposes, kept apart so one stream never shifts another.
const STREAM_SHUFFLE: u64 = 1;
const STREAM_NEGATIVES: u64 = 2;
const STREAM_DROPOUT: u64 = 3;

/// A ChaCha stream fixed by `(seed, purpose, index)`.
pub fn stream_rng(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 56) ^ index);
    rng
}

/// Everything negative sampling needs beyond the strategy itself.
pub struct Sampler<'a> {
    strategy: &'a NegativeStrategy,
    catalog_ids: Vec<String>,
    popular: Vec<String>,
    histories: &'a HashMap<String, Vec<String>>,
    hard_pools: Option<Vec<Vec<String>>>,
}

impl<'a> Sampler<'a> {
    pub fn new(
        strategy: &'a NegativeStrategy,
        catalog: &ItemCatalog,
        popular: Vec<String>,
        histories: &'a HashMap<String, Vec<String>>,
    ) -> Self {
        Sampler {
            strategy,
            catalog_ids: catalog.item_ids().map(str::to_string).collect(),
            popular,
            histories,
            hard_pools: None,
        }
    }

    pub fn with_hard_pools(mut self, pools: Vec<Vec<String>>) -> Self {
        self.hard_pools = Some(pools);
        self
    }

    pub fn popular(&self) -> &[String] {
        &self.popular
    }

    /// Negatives for example `index` of the training split.
    pub fn sample(
        &self,
        index: usize,
        example: &SplitExample,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<String>, TrainingError> {
        let k = self.strategy.negatives_per_example;
        let exclude = exclusion_set(example, self.histories);
        match self.strategy.kind {
            StrategyKind::InbatchOnly => Ok(Vec::new()),
            StrategyKind::Random => sample_random_negatives(&self.catalog_ids, &exclude, k, rng),
            StrategyKind::Popular => sample_popular_negatives(&self.popular, &exclude, k, rng),
            StrategyKind::Hard => {
                let pools = self.hard_pools.as_ref().ok_or(TrainingError::MissingHardPools)?;
                sample_random_negatives(&pools[index], &exclude, k, rng)
            }
        }
    }
}

/// Inputs shared by every step.
pub struct TrainingData<'a> {
    pub examples: &'a [SplitExample],
    pub featurizer: &'a Featurizer,
    pub catalog: &'a ItemCatalog,
    pub histories: &'a HashMap<String, Vec<String>>,
    /// Popular set for the popular strategy; ignored otherwise.
    pub popular: Vec<String>,
    /// Pre-mined pools for the hard strategy, aligned with `examples`.
    pub hard_pools: Option<Vec<Vec<String>>>,
}

pub struct TrainOutcome {
    pub params: Parameters,
    pub log: Vec<StepLog>,
}

/// Example indices for update `step`: consecutive slices of a sequence of
/// per-epoch seeded shuffles.
pub fn batch_indices(step: usize, batch_size: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut cached_epoch = usize::MAX;
    let mut order: Vec<usize> = Vec::new();
    (0..batch_size)
        .map(|slot| {
            let pos = step * batch_size + slot;
            let epoch = pos / n;
            if epoch != cached_epoch {
                order = (0..n).collect();
                order.shuffle(&mut stream_rng(seed, STREAM_SHUFFLE, epoch as u64));
                cached_epoch = epoch;
            }
            order[pos % n]
        })
        .collect()
}

/// Run `config.total_steps` Adam updates from `init`.
///
/// `on_step` sees each log line as it is produced. A non-finite loss or
/// gradient aborts with [`TrainingError::Divergence`].
pub fn train(
    config: &TrainConfig,
    strategy: &NegativeStrategy,
    data: &TrainingData<'_>,
    init: Parameters,
    mut on_step: impl FnMut(&StepLog),
) -> Result<TrainOutcome, TrainingError> {
    config.validate(strategy)?;
    if data.examples.is_empty() {
        return Err(TrainingError::EmptySplit);
    }
    let mut sampler = Sampler::new(strategy, data.catalog, data.popular.clone(), data.histories);
    if strategy.kind == StrategyKind::Hard {
        let pools = data.hard_pools.clone().ok_or(TrainingError::MissingHardPools)?;
        if pools.len() != data.examples.len() {
            return Err(TrainingError::HardPoolMismatch { pools: pools.len(), examples: data.examples.len() });
        }
        sampler = sampler.with_hard_pools(pools);
    }

    let mut params = init;
    let mut adam = Adam::new(&params, config.adam.into());
    let mut log = Vec::with_capacity(config.total_steps);
    let n = data.examples.len();
    for step in 0..config.total_steps {
        if let (StrategyKind::Hard, Some(every)) = (strategy.kind, strategy.remine_every) {
            if step > 0 && step % every == 0 {
                let embeddings = encode_catalog(&params, data.featurizer, data.catalog, "")?;
                let pools = mine_hard_negatives(
                    &params,
                    data.featurizer,
                    &embeddings,
                    data.examples,
                    data.histories,
                    strategy.hard_pool_size,
                )?;
                sampler = sampler.with_hard_pools(pools);
            }
        }

        let indices = batch_indices(step, config.batch_size, n, config.seed);
        let examples = indices
            .par_iter()
            .enumerate()
            .map(|(slot, &i)| {
                let e = &data.examples[i];
                let stream = (step * config.batch_size + slot) as u64;
                let mut rng = stream_rng(config.seed, STREAM_NEGATIVES, stream);
                Ok(TrainingExample {
                    user_id: e.user_id.clone(),
                    prefix: e.prefix.clone(),
                    target: e.target.clone(),
                    negatives: sampler.sample(i, e, &mut rng)?,
                })
            })
            .collect::<Result<Vec<_>, TrainingError>>()?;

        let (batch, _) = assemble_batch(&examples, data.featurizer, strategy.shared_pool)?;
        let pass = if params.config().dropout_rate > 0.0 {
            forward_loss_training(&params, &batch, stream_rng(config.seed, STREAM_DROPOUT, step as u64))?
        } else {
            forward_loss(&params, &batch)?
        };
        let loss = pass.loss();
        let mut grads = backward(&params, &pass);
        drop(pass);
        if !loss.is_finite() || !grads.is_finite() {
            return Err(TrainingError::Divergence { step, loss });
        }
        if let Some(max_norm) = config.gradient_clip_norm {
            clip_gradients(&mut grads, max_norm);
        }
        let lr = lr_schedule(step, config.total_steps, config.learning_rate, config.warmup_proportion);
        adam.step(&mut params, &grads, lr);
        if !params.is_finite() {
            return Err(TrainingError::Divergence { step, loss });
        }
        let entry = StepLog { step, lr, loss };
        on_step(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome { params, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_validation() {
        NegativeStrategy::default().validate().unwrap();
        NegativeStrategy::of_kind(StrategyKind::InbatchOnly).validate().unwrap();
        let mut s = NegativeStrategy::of_kind(StrategyKind::Popular);
        s.popular_set_size = 3;
        assert!(s.validate().is_err());
        let c = TrainConfig { batch_size: 1, ..Default::default() };
        assert!(c.validate(&NegativeStrategy::of_kind(StrategyKind::InbatchOnly)).is_err());
        c.validate(&NegativeStrategy::default()).unwrap();
    }

    #[test]
    fn hard_stage_preset() {
        let c = TrainConfig::default().hard_negative_stage();
        assert_eq!(c.learning_rate, 5e-5);
        assert_eq!(c.warmup_proportion, 0.0);
        assert_eq!(lr_schedule(0, c.total_steps, c.learning_rate, c.warmup_proportion), 5e-5);
    }

    #[test]
    fn every_example_once_per_epoch() {
        let n = 10;
        let mut seen: Vec<usize> = (0..5).flat_map(|s| batch_indices(s, 4, n, 9)).collect();
        let first: Vec<usize> = seen.drain(..n).collect();
        let mut sorted = first.clone();
        sorted.sort();
        assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        assert_ne!(first, (0..n).collect::<Vec<_>>());
        assert_eq!(batch_indices(3, 4, n, 9), batch_indices(3, 4, n, 9));
    }

    #[test]
    fn strategy_names_round_trip() {
        for k in [StrategyKind::InbatchOnly, StrategyKind::Random, StrategyKind::Popular, StrategyKind::Hard] {
            assert_eq!(k.to_string().parse::<StrategyKind>().unwrap(), k);
        }
    }
}
