//! End-to-end stages over a working directory.
//!
//! ```text
//! workdir/
//!   data/{train,dev,test}.jsonl  data/items.jsonl  data/stats.json
//!   vocab.txt
//!   <tag>.ckpt  <tag>.log.jsonl  <tag>.embeddings.txt
//!   <tag>.report-<split>.json  <tag>.rankings-<split>.jsonl
//!   <tag>.analysis.json  <tag>.export.txt
//! ```
//!
//! `<tag>` is the checkpoint file stem, `model-<strategy>` by default.
//! Every artifact is a pure function of the inputs, the config and the seed.

mod config;

pub use config::{AnalysisSettings, EvalSettings, EvalSplit, ModelSettings, Paths, PreprocessSettings, RunConfig};

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{
    bleu4, dist_n, grouped_metrics, item_frequency, popular_ratio, select_export_items, tail_split_by_ratio,
    AnalysisError, FrequencySummary, GroupedMetrics,
};
use crate::corpus::{
    build_histories, corpus_stats, date_filter, full_histories, ingest_interactions, k_core_filter,
    leave_one_out_split, load_item_catalog, read_split, write_item_catalog, write_split, CorpusError, CorpusStats,
    DatasetSplit, ItemCatalog,
};
use crate::encoder::{load_checkpoint, save_checkpoint, Checkpoint, EncoderError, IdSpace, ModelConfig, Parameters};
use crate::ranker::{embeddings_to_text, encode_catalog, evaluate, EvalOptions, RankerError, UserRanking};
use crate::tensor::Matrix;
use crate::training::{
    build_popular_set, mine_hard_negatives, popularity_occurrences, train, StrategyKind, TrainingData, TrainingError,
};
use crate::verbalize::{build_vocab, vocabulary_texts, Featurizer, TokenVocab, VerbalizeError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("stale artifact: {0}")]
    Stale(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl PipelineError {
    /// 2 config, 3 data or stale artifacts, 4 numeric failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data(_) | PipelineError::Stale(_) => 3,
            PipelineError::Numeric(_) => 4,
        }
    }
}

impl From<CorpusError> for PipelineError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::InvalidBounds { .. } | CorpusError::InvalidMinCount => PipelineError::Config(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<VerbalizeError> for PipelineError {
    fn from(e: VerbalizeError) -> Self {
        match e {
            VerbalizeError::InvalidTemplate(_)
            | VerbalizeError::VocabTooSmall(_)
            | VerbalizeError::InvalidGeometry { .. } => PipelineError::Config(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<EncoderError> for PipelineError {
    fn from(e: EncoderError) -> Self {
        match e {
            EncoderError::InvalidConfig(_) => PipelineError::Config(e.to_string()),
            EncoderError::NonFinite(_) => PipelineError::Numeric(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<RankerError> for PipelineError {
    fn from(e: RankerError) -> Self {
        match e {
            RankerError::Encoder(inner) => inner.into(),
            RankerError::Verbalize(inner) => inner.into(),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<TrainingError> for PipelineError {
    fn from(e: TrainingError) -> Self {
        match e {
            TrainingError::Divergence { .. } => PipelineError::Numeric(e.to_string()),
            TrainingError::InvalidConfig(_) | TrainingError::MissingHardPools => PipelineError::Config(e.to_string()),
            TrainingError::Encoder(inner) => inner.into(),
            TrainingError::Verbalize(inner) => inner.into(),
            TrainingError::Ranker(inner) => inner.into(),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<AnalysisError> for PipelineError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::InvalidFraction(_) | AnalysisError::InvalidOrder | AnalysisError::InvalidTopK => {
                PipelineError::Config(e.to_string())
            }
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Data(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_error(parent))?;
    }
    fs::write(path, contents).map_err(io_error(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_file(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
}

/// Artifact locations under a working directory.
#[derive(Debug, Clone)]
pub struct Workdir(pub PathBuf);

impl Workdir {
    pub fn data(&self) -> PathBuf {
        self.0.join("data")
    }

    pub fn items(&self) -> PathBuf {
        self.data().join("items.jsonl")
    }

    pub fn stats(&self) -> PathBuf {
        self.data().join("stats.json")
    }

    pub fn vocab(&self) -> PathBuf {
        self.0.join("vocab.txt")
    }

    pub fn default_checkpoint(&self, kind: StrategyKind) -> PathBuf {
        self.0.join(format!("model-{kind}.ckpt"))
    }

    /// `<tag>.<suffix>` next to the other artifacts.
    pub fn artifact(&self, tag: &str, suffix: &str) -> PathBuf {
        self.0.join(format!("{tag}.{suffix}"))
    }
}

/// The file stem that names a checkpoint's derived artifacts.
pub fn checkpoint_tag(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into())
}

/// Filter, split and write the corpus.
pub fn preprocess(config: &RunConfig) -> Result<CorpusStats, PipelineError> {
    let wd = Workdir(config.paths.workdir.clone());
    let mut records = ingest_interactions(&config.paths.interactions)?;
    let p = &config.preprocess;
    if p.min_timestamp.is_some() || p.max_timestamp.is_some() {
        records = date_filter(&records, p.min_timestamp.unwrap_or(i64::MIN), p.max_timestamp.unwrap_or(i64::MAX))?;
    }
    let records = k_core_filter(&records, p.min_count)?;
    let catalog = load_item_catalog(&config.paths.items)?.restrict_to(&records)?;
    let split = leave_one_out_split(&build_histories(&records))?;
    let stats = corpus_stats(&records, &split);
    fs::create_dir_all(wd.data()).map_err(io_error(&wd.data()))?;
    write_split(wd.data(), &split)?;
    write_item_catalog(wd.items(), catalog.items())?;
    write_json(&wd.stats(), &stats)?;
    Ok(stats)
}

/// Build the word vocabulary from item texts and the history frame.
pub fn build_vocabulary(config: &RunConfig) -> Result<TokenVocab, PipelineError> {
    let wd = Workdir(config.paths.workdir.clone());
    let catalog = load_item_catalog(wd.items())?;
    let split = read_split(wd.data())?;
    let v = &config.verbalize;
    v.validate()?;
    let users: Vec<&str> = split.test.iter().map(|e| e.user_id.as_str()).collect();
    let texts = vocabulary_texts(catalog.items(), v, &users);
    let vocab = build_vocab(&texts, config.vocab_max_size)?;
    write_file(&wd.vocab(), &vocab.to_file_string())?;
    Ok(vocab)
}

/// Preprocessed data, vocabulary and featurizer for model stages.
pub struct Workspace {
    pub split: DatasetSplit,
    pub catalog: ItemCatalog,
    pub vocab: TokenVocab,
    pub featurizer: Featurizer,
    /// Digest of the split and catalog files.
    pub data_fingerprint: String,
}

impl Workspace {
    pub fn load(config: &RunConfig) -> Result<Self, PipelineError> {
        let wd = Workdir(config.paths.workdir.clone());
        let split = read_split(wd.data())?;
        let catalog = load_item_catalog(wd.items())?;
        let vocab_path = wd.vocab();
        if !vocab_path.exists() {
            return Err(PipelineError::Data(format!("{} is missing; run build-vocab first", vocab_path.display())));
        }
        let vocab = TokenVocab::load(&vocab_path)?;
        let mut hasher = Sha256::new();
        for name in ["train.jsonl", "dev.jsonl", "test.jsonl", "items.jsonl"] {
            let path = wd.data().join(name);
            hasher.update(fs::read(&path).map_err(io_error(&path))?);
        }
        let featurizer =
            Featurizer::new(&catalog, config.verbalize.clone(), vocab.clone(), config.sessions, config.item_max_len)?;
        Ok(Workspace { split, catalog, vocab, featurizer, data_fingerprint: hex::encode(hasher.finalize()) })
    }

    pub fn model_config(&self, config: &RunConfig) -> ModelConfig {
        let m = &config.model;
        ModelConfig {
            vocab_size: self.vocab.len(),
            hidden_dim: m.hidden_dim,
            num_heads: m.num_heads,
            ffn_dim: m.ffn_dim,
            encoder_layers: m.encoder_layers,
            decoder_layers: m.decoder_layers,
            max_session_len: config.sessions.session_len.max(config.item_max_len),
            dropout_rate: m.dropout,
            id_fusion: m.id_fusion,
        }
    }

    /// Load a checkpoint and make sure it was trained on this vocabulary
    /// and data.
    pub fn load_checkpoint(&self, path: &Path) -> Result<Checkpoint, PipelineError> {
        if !path.exists() {
            return Err(PipelineError::Data(format!("checkpoint {} does not exist", path.display())));
        }
        let ckpt = load_checkpoint(path)?;
        let vocab_fp = self.vocab.fingerprint();
        let check = |key: &str, expected: &str, what: &str| match ckpt.meta.get(key) {
            Some(v) if v == expected => Ok(()),
            _ => Err(PipelineError::Stale(format!(
                "checkpoint {} was trained on a different {what}; retrain it",
                path.display()
            ))),
        };
        check("vocab", &vocab_fp, "vocabulary")?;
        check("data", &self.data_fingerprint, "split or catalog")?;
        Ok(ckpt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub steps: usize,
    pub final_loss: f64,
    pub checkpoint_fingerprint: String,
}

/// Train from scratch, or from `init` when given. The hard strategy needs
/// `init`: its negatives are mined with that checkpoint.
pub fn train_model(config: &RunConfig, init: Option<&Path>) -> Result<TrainSummary, PipelineError> {
    config.validate()?;
    let ws = Workspace::load(config)?;
    let wd = Workdir(config.paths.workdir.clone());
    let strategy = &config.strategy;
    if strategy.kind == StrategyKind::Hard && init.is_none() {
        return Err(PipelineError::Config(
            "the hard strategy mines negatives with a prior checkpoint; pass --init-checkpoint".into(),
        ));
    }
    let model_config = ws.model_config(config);
    let params = match init {
        Some(path) => {
            let ckpt = ws.load_checkpoint(path)?;
            if ckpt.params.config() != &model_config {
                return Err(PipelineError::Stale(format!(
                    "checkpoint {} has a different model config than the run config",
                    path.display()
                )));
            }
            ckpt.params
        }
        None => {
            let ids = IdSpace {
                items: ws.catalog.item_ids().map(str::to_string).collect(),
                users: ws.split.test.iter().map(|e| e.user_id.clone()).collect(),
            };
            let ids = if model_config.id_fusion == crate::encoder::IdFusion::Embed { ids } else { IdSpace::default() };
            Parameters::init_with_ids(&model_config, ids, config.seed)?
        }
    };

    let histories = full_histories(&ws.split);
    let popular = if strategy.kind == StrategyKind::Popular {
        build_popular_set(popularity_occurrences(&ws.split, strategy.popularity_basis), strategy.popular_set_size)
    } else {
        Vec::new()
    };
    let hard_pools = if strategy.kind == StrategyKind::Hard {
        let embeddings = encode_catalog(&params, &ws.featurizer, &ws.catalog, "")?;
        Some(mine_hard_negatives(
            &params,
            &ws.featurizer,
            &embeddings,
            &ws.split.train,
            &histories,
            strategy.hard_pool_size,
        )?)
    } else {
        None
    };
    let data = TrainingData {
        examples: &ws.split.train,
        featurizer: &ws.featurizer,
        catalog: &ws.catalog,
        histories: &histories,
        popular,
        hard_pools,
    };

    let checkpoint_path = wd.default_checkpoint(strategy.kind);
    if init.is_some_and(|p| p == checkpoint_path) {
        return Err(PipelineError::Config(format!(
            "{} would overwrite its own init checkpoint",
            checkpoint_path.display()
        )));
    }
    let tag = checkpoint_tag(&checkpoint_path);
    let log_path = wd.artifact(&tag, "log.jsonl");
    fs::create_dir_all(&wd.0).map_err(io_error(&wd.0))?;
    let mut log = std::io::BufWriter::new(fs::File::create(&log_path).map_err(io_error(&log_path))?);
    let mut log_failure = None;
    let outcome = train(&config.effective_train(), strategy, &data, params, |entry| {
        let line = serde_json::to_string(entry).expect("log line serializes");
        if let Err(e) = writeln!(log, "{line}") {
            log_failure.get_or_insert(e);
        }
    });
    log.flush().map_err(io_error(&log_path))?;
    if let Some(e) = log_failure {
        return Err(io_error(&log_path)(e));
    }
    let outcome = outcome?;

    let ckpt = Checkpoint::new(outcome.params)
        .with_meta("data", ws.data_fingerprint.clone())
        .with_meta("vocab", ws.vocab.fingerprint())
        .with_meta("strategy", strategy.kind.to_string())
        .with_meta("steps", config.train.total_steps.to_string())
        .with_meta("seed", config.seed.to_string());
    save_checkpoint(&checkpoint_path, &ckpt)?;
    Ok(TrainSummary {
        checkpoint: checkpoint_path,
        steps: outcome.log.len(),
        final_loss: outcome.log.last().map_or(f64::NAN, |l| l.loss),
        checkpoint_fingerprint: ckpt.fingerprint(),
    })
}

/// Write every catalog item's embedding.
pub fn encode_items(config: &RunConfig, checkpoint: &Path) -> Result<PathBuf, PipelineError> {
    let ws = Workspace::load(config)?;
    let ckpt = ws.load_checkpoint(checkpoint)?;
    let embeddings = encode_catalog(&ckpt.params, &ws.featurizer, &ws.catalog, &ckpt.fingerprint())?;
    let out = Workdir(config.paths.workdir.clone()).artifact(&checkpoint_tag(checkpoint), "embeddings.txt");
    write_file(&out, &embeddings_to_text(&embeddings.item_ids, &embeddings.matrix, None))?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub users: usize,
    pub metrics: BTreeMap<String, f64>,
    pub mask_history: bool,
    pub checkpoint_fingerprint: String,
    pub config: BTreeMap<String, String>,
}

/// Full-catalog ranking over the configured split. Writes the report and
/// per-user rankings.
pub fn evaluate_model(config: &RunConfig, checkpoint: &Path) -> Result<EvalReport, PipelineError> {
    config.validate()?;
    let ws = Workspace::load(config)?;
    let ckpt = ws.load_checkpoint(checkpoint)?;
    let fingerprint = ckpt.fingerprint();
    let embeddings = encode_catalog(&ckpt.params, &ws.featurizer, &ws.catalog, &fingerprint)?;
    let examples = match config.eval.split {
        EvalSplit::Dev => &ws.split.dev,
        EvalSplit::Test => &ws.split.test,
    };
    let options = EvalOptions {
        cutoffs: config.eval.ks.clone(),
        mask_history: config.eval.mask_history,
        keep_top: config.eval.keep_top.max(config.analysis.top_k),
    };
    let result = evaluate(&ckpt.params, &ws.featurizer, &embeddings, examples, &options)?;
    let report = EvalReport {
        split: config.eval.split.name().into(),
        users: result.report.users,
        metrics: result.report.metrics,
        mask_history: config.eval.mask_history,
        checkpoint_fingerprint: fingerprint,
        config: config.echo(),
    };
    let wd = Workdir(config.paths.workdir.clone());
    let tag = checkpoint_tag(checkpoint);
    let split = config.eval.split.name();
    write_json(&wd.artifact(&tag, &format!("report-{split}.json")), &report)?;
    let mut lines = String::new();
    for r in &result.rankings {
        lines.push_str(&serde_json::to_string(r).expect("ranking serializes"));
        lines.push('\n');
    }
    write_file(&wd.artifact(&tag, &format!("rankings-{split}.jsonl")), &lines)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub split: String,
    pub frequency: FrequencySummary,
    pub tail_fraction_requested: f64,
    pub threshold: usize,
    pub achieved_ratio: f64,
    pub long_tail_items: usize,
    pub head_items: usize,
    pub grouped: GroupedMetrics,
    pub popular_set_size: usize,
    pub top_k: usize,
    pub popular_ratio: f64,
    /// Distinct-n is computed per user and then averaged.
    pub dist_mode: String,
    pub dist_1: f64,
    pub dist_2: f64,
    pub bleu4: f64,
    pub checkpoint_fingerprint: String,
    pub config: BTreeMap<String, String>,
}

fn read_rankings(path: &Path) -> Result<Vec<UserRanking>, PipelineError> {
    let text = fs::read_to_string(path)
        .map_err(|e| PipelineError::Data(format!("{}: {e}; run evaluate first", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display()))))
        .collect()
}

/// Long-tail and popularity-bias diagnostics over the evaluated split.
pub fn analyze_model(config: &RunConfig, checkpoint: &Path) -> Result<AnalysisReport, PipelineError> {
    config.validate()?;
    let ws = Workspace::load(config)?;
    let ckpt = ws.load_checkpoint(checkpoint)?;
    let fingerprint = ckpt.fingerprint();
    let wd = Workdir(config.paths.workdir.clone());
    let tag = checkpoint_tag(checkpoint);
    let split = config.eval.split.name();
    let report: EvalReport = read_json(&wd.artifact(&tag, &format!("report-{split}.json")))
        .map_err(|e| PipelineError::Data(format!("{e}; run evaluate first")))?;
    if report.checkpoint_fingerprint != fingerprint {
        return Err(PipelineError::Stale(format!("rankings for {tag} come from an older checkpoint; rerun evaluate")));
    }
    let rankings = read_rankings(&wd.artifact(&tag, &format!("rankings-{split}.jsonl")))?;

    let a = &config.analysis;
    let freq = item_frequency(&ws.split.train, &ws.catalog);
    let tail = tail_split_by_ratio(&freq, a.tail_fraction)?;
    let grouped = grouped_metrics(&rankings, &tail, &config.eval.ks);
    let popular = build_popular_set(popularity_occurrences(&ws.split, a.popularity_basis), a.popular_size);
    let popular_refs: HashSet<&str> = popular.iter().map(String::as_str).collect();
    let top_lists: Vec<Vec<&str>> =
        rankings.iter().map(|r| r.top_items.iter().take(a.top_k).map(String::as_str).collect()).collect();
    let text = |id: &str| ws.featurizer.item_text(id).unwrap_or(id).to_string();
    let recommended: Vec<Vec<String>> = top_lists.iter().map(|l| l.iter().map(|id| text(id)).collect()).collect();
    let bleu_inputs: Vec<(String, Vec<String>, String)> = rankings
        .iter()
        .zip(&recommended)
        .map(|(r, texts)| (r.user_id.clone(), texts.clone(), text(&r.target)))
        .collect();

    let out = AnalysisReport {
        split: split.into(),
        frequency: FrequencySummary::from(&freq),
        tail_fraction_requested: a.tail_fraction,
        threshold: tail.threshold,
        achieved_ratio: tail.achieved_ratio,
        long_tail_items: tail.long_tail.len(),
        head_items: tail.head.len(),
        grouped,
        popular_set_size: popular.len(),
        top_k: a.top_k,
        popular_ratio: popular_ratio(&top_lists, &popular_refs, a.top_k)?,
        dist_mode: "per_user".into(),
        dist_1: dist_n(&recommended, 1)?,
        dist_2: dist_n(&recommended, 2)?,
        bleu4: bleu4(&bleu_inputs)?,
        checkpoint_fingerprint: fingerprint,
        config: config.echo(),
    };
    write_json(&wd.artifact(&tag, "analysis.json"), &out)?;
    Ok(out)
}

/// Labeled embeddings of a seeded sample of popular and other items.
pub fn export_item_embeddings(config: &RunConfig, checkpoint: &Path) -> Result<PathBuf, PipelineError> {
    let ws = Workspace::load(config)?;
    let ckpt = ws.load_checkpoint(checkpoint)?;
    let a = &config.analysis;
    let popular = build_popular_set(popularity_occurrences(&ws.split, a.popularity_basis), a.popular_size);
    let popular_refs: HashSet<&str> = popular.iter().map(String::as_str).collect();
    let catalog_ids: Vec<String> = ws.catalog.item_ids().map(str::to_string).collect();
    let chosen = select_export_items(&catalog_ids, &popular_refs, a.export_per_group, config.seed)?;

    let d = ckpt.params.config().hidden_dim;
    let mut data = Vec::with_capacity(chosen.len() * d);
    for (id, _) in &chosen {
        let tokens =
            ws.featurizer.item_tokens(id).ok_or_else(|| PipelineError::Data(format!("item {id} has no tokens")))?;
        data.extend(crate::encoder::encode_item(&ckpt.params, tokens, id)?.0);
    }
    let ids: Vec<String> = chosen.iter().map(|(id, _)| id.clone()).collect();
    let labels: Vec<String> = chosen.iter().map(|(_, l)| l.to_string()).collect();
    let out = Workdir(config.paths.workdir.clone()).artifact(&checkpoint_tag(checkpoint), "export.txt");
    write_file(&out, &embeddings_to_text(&ids, &Matrix::from_vec(ids.len(), d, data), Some(&labels)))?;
    Ok(out)
}
