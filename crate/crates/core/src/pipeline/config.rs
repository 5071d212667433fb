//! Line-oriented `key = value` run configuration with dotted sections.
//!
//! ```text
//! # comment
//! seed = 42
//! model.hidden_dim = 32
//! strategy.kind = popular
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::encoder::IdFusion;
use crate::training::{NegativeStrategy, PopularityBasis, StrategyKind, TrainConfig};
use crate::verbalize::{SessionGeometry, VerbalizeConfig, DEFAULT_HISTORY_TEMPLATE, USER_ID_HISTORY_TEMPLATE};

use super::PipelineError;

#[derive(Debug, Clone, PartialEq)]
pub struct Paths {
    pub interactions: PathBuf,
    pub items: PathBuf,
    pub workdir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessSettings {
    pub min_count: usize,
    pub min_timestamp: Option<i64>,
    pub max_timestamp: Option<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSettings {
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub dropout: f64,
    pub id_fusion: IdFusion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    Dev,
    Test,
}

impl EvalSplit {
    pub fn name(self) -> &'static str {
        match self {
            EvalSplit::Dev => "dev",
            EvalSplit::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub ks: Vec<usize>,
    pub mask_history: bool,
    pub split: EvalSplit,
    pub keep_top: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSettings {
    pub tail_fraction: f64,
    pub popular_size: usize,
    pub popularity_basis: PopularityBasis,
    pub top_k: usize,
    pub export_per_group: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    pub paths: Paths,
    pub preprocess: PreprocessSettings,
    pub verbalize: VerbalizeConfig,
    pub item_max_len: usize,
    pub sessions: SessionGeometry,
    pub vocab_max_size: usize,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub hard_lr: f64,
    pub hard_warmup: f64,
    pub strategy: NegativeStrategy,
    pub eval: EvalSettings,
    pub analysis: AnalysisSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        let hard = TrainConfig::default().hard_negative_stage();
        RunConfig {
            seed: 42,
            threads: 1,
            paths: Paths {
                interactions: "interactions.tsv".into(),
                items: "items.jsonl".into(),
                workdir: "work".into(),
            },
            preprocess: PreprocessSettings { min_count: 5, min_timestamp: None, max_timestamp: None },
            verbalize: VerbalizeConfig::default(),
            item_max_len: 32,
            sessions: SessionGeometry::new(2, 32),
            vocab_max_size: 8192,
            model: ModelSettings {
                hidden_dim: 32,
                num_heads: 4,
                ffn_dim: 64,
                encoder_layers: 2,
                decoder_layers: 1,
                dropout: 0.0,
                id_fusion: IdFusion::Off,
            },
            train: TrainConfig::default(),
            hard_lr: hard.learning_rate,
            hard_warmup: hard.warmup_proportion,
            strategy: NegativeStrategy::default(),
            eval: EvalSettings { ks: vec![10, 20], mask_history: false, split: EvalSplit::Test, keep_top: 20 },
            analysis: AnalysisSettings {
                tail_fraction: 0.2,
                popular_size: 500,
                popularity_basis: PopularityBasis::TrainTargets,
                top_k: 5,
                export_per_group: 50,
            },
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, PipelineError> {
    value.parse().map_err(|_| PipelineError::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, PipelineError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(PipelineError::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn parse_optional<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>, PipelineError> {
    if value == "none" {
        Ok(None)
    } else {
        parse_num(key, value).map(Some)
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, PipelineError> {
    value.split(',').map(|v| parse_num(key, v.trim())).collect()
}

fn show_optional<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), T::to_string)
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let mut config = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| PipelineError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    /// Apply one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let v = value;
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "threads" => self.threads = parse_num(key, v)?,
            "paths.interactions" => self.paths.interactions = v.into(),
            "paths.items" => self.paths.items = v.into(),
            "paths.workdir" => self.paths.workdir = v.into(),
            "preprocess.min_count" => self.preprocess.min_count = parse_num(key, v)?,
            "preprocess.min_timestamp" => self.preprocess.min_timestamp = parse_optional(key, v)?,
            "preprocess.max_timestamp" => self.preprocess.max_timestamp = parse_optional(key, v)?,
            "verbalize.attributes" => {
                self.verbalize.attribute_names =
                    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
            }
            "verbalize.include_item_id" => self.verbalize.include_item_id = parse_bool(key, v)?,
            "verbalize.user_prompt" => {
                let on = parse_bool(key, v)?;
                self.verbalize.include_user_id = on;
                self.verbalize.history_template =
                    if on { USER_ID_HISTORY_TEMPLATE } else { DEFAULT_HISTORY_TEMPLATE }.into();
            }
            "verbalize.item_max_len" => self.item_max_len = parse_num(key, v)?,
            "verbalize.sessions" => self.sessions = v.parse().map_err(PipelineError::Config)?,
            "vocab.max_size" => self.vocab_max_size = parse_num(key, v)?,
            "model.hidden_dim" => self.model.hidden_dim = parse_num(key, v)?,
            "model.num_heads" => self.model.num_heads = parse_num(key, v)?,
            "model.ffn_dim" => self.model.ffn_dim = parse_num(key, v)?,
            "model.encoder_layers" => self.model.encoder_layers = parse_num(key, v)?,
            "model.decoder_layers" => self.model.decoder_layers = parse_num(key, v)?,
            "model.dropout" => self.model.dropout = parse_num(key, v)?,
            "model.id_fusion" => {
                self.model.id_fusion = match v {
                    "off" => IdFusion::Off,
                    "embed" => IdFusion::Embed,
                    _ => return Err(PipelineError::Config(format!("{key}: expected off or embed, got {v:?}"))),
                }
            }
            "train.batch_size" | "batch_size" => self.train.batch_size = parse_num(key, v)?,
            "train.lr" | "lr" => self.train.learning_rate = parse_num(key, v)?,
            "train.warmup" | "warmup" => self.train.warmup_proportion = parse_num(key, v)?,
            "train.total_steps" | "total_steps" => self.train.total_steps = parse_num(key, v)?,
            "train.grad_clip" => self.train.gradient_clip_norm = parse_optional(key, v)?,
            "train.adam_beta1" => self.train.adam.beta1 = parse_num(key, v)?,
            "train.adam_beta2" => self.train.adam.beta2 = parse_num(key, v)?,
            "train.adam_eps" => self.train.adam.eps = parse_num(key, v)?,
            "train.hard_lr" => self.hard_lr = parse_num(key, v)?,
            "train.hard_warmup" => self.hard_warmup = parse_num(key, v)?,
            "strategy.kind" => self.strategy.kind = v.parse().map_err(PipelineError::Config)?,
            "strategy.k" => self.strategy.negatives_per_example = parse_num(key, v)?,
            "strategy.popular_size" => self.strategy.popular_set_size = parse_num(key, v)?,
            "strategy.hard_pool" => self.strategy.hard_pool_size = parse_num(key, v)?,
            "strategy.popularity_basis" => self.strategy.popularity_basis = v.parse().map_err(PipelineError::Config)?,
            "strategy.shared_pool" => self.strategy.shared_pool = parse_bool(key, v)?,
            "strategy.remine_every" => self.strategy.remine_every = parse_optional(key, v)?,
            "eval.ks" => self.eval.ks = parse_list(key, v)?,
            "eval.mask_history" => self.eval.mask_history = parse_bool(key, v)?,
            "eval.split" => {
                self.eval.split = match v {
                    "dev" => EvalSplit::Dev,
                    "test" => EvalSplit::Test,
                    _ => return Err(PipelineError::Config(format!("{key}: expected dev or test, got {v:?}"))),
                }
            }
            "eval.keep_top" => self.eval.keep_top = parse_num(key, v)?,
            "analysis.tail_fraction" => self.analysis.tail_fraction = parse_num(key, v)?,
            "analysis.popular_size" => self.analysis.popular_size = parse_num(key, v)?,
            "analysis.popularity_basis" => self.analysis.popularity_basis = v.parse().map_err(PipelineError::Config)?,
            "analysis.top_k" => self.analysis.top_k = parse_num(key, v)?,
            "analysis.export_per_group" => self.analysis.export_per_group = parse_num(key, v)?,
            _ => return Err(PipelineError::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Every resolved key and value, sorted by key.
    pub fn entries(&self) -> BTreeMap<String, String> {
        let basis = |b: PopularityBasis| match b {
            PopularityBasis::FullDataset => "full_dataset",
            PopularityBasis::TrainTargets => "train_targets",
        };
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let pairs: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("threads", self.threads.to_string()),
            ("paths.interactions", self.paths.interactions.display().to_string()),
            ("paths.items", self.paths.items.display().to_string()),
            ("paths.workdir", self.paths.workdir.display().to_string()),
            ("preprocess.min_count", self.preprocess.min_count.to_string()),
            ("preprocess.min_timestamp", show_optional(&self.preprocess.min_timestamp)),
            ("preprocess.max_timestamp", show_optional(&self.preprocess.max_timestamp)),
            ("verbalize.attributes", self.verbalize.attribute_names.join(",")),
            ("verbalize.include_item_id", self.verbalize.include_item_id.to_string()),
            ("verbalize.user_prompt", self.verbalize.include_user_id.to_string()),
            ("verbalize.item_max_len", self.item_max_len.to_string()),
            ("verbalize.sessions", self.sessions.to_string()),
            ("vocab.max_size", self.vocab_max_size.to_string()),
            ("model.hidden_dim", self.model.hidden_dim.to_string()),
            ("model.num_heads", self.model.num_heads.to_string()),
            ("model.ffn_dim", self.model.ffn_dim.to_string()),
            ("model.encoder_layers", self.model.encoder_layers.to_string()),
            ("model.decoder_layers", self.model.decoder_layers.to_string()),
            ("model.dropout", self.model.dropout.to_string()),
            (
                "model.id_fusion",
                match self.model.id_fusion {
                    IdFusion::Off => "off",
                    IdFusion::Embed => "embed",
                }
                .to_string(),
            ),
            ("train.batch_size", self.train.batch_size.to_string()),
            ("train.lr", self.train.learning_rate.to_string()),
            ("train.warmup", self.train.warmup_proportion.to_string()),
            ("train.total_steps", self.train.total_steps.to_string()),
            ("train.grad_clip", show_optional(&self.train.gradient_clip_norm)),
            ("train.adam_beta1", self.train.adam.beta1.to_string()),
            ("train.adam_beta2", self.train.adam.beta2.to_string()),
            ("train.adam_eps", self.train.adam.eps.to_string()),
            ("train.hard_lr", self.hard_lr.to_string()),
            ("train.hard_warmup", self.hard_warmup.to_string()),
            ("strategy.kind", self.strategy.kind.to_string()),
            ("strategy.k", self.strategy.negatives_per_example.to_string()),
            ("strategy.popular_size", self.strategy.popular_set_size.to_string()),
            ("strategy.hard_pool", self.strategy.hard_pool_size.to_string()),
            ("strategy.popularity_basis", basis(self.strategy.popularity_basis).to_string()),
            ("strategy.shared_pool", self.strategy.shared_pool.to_string()),
            ("strategy.remine_every", show_optional(&self.strategy.remine_every)),
            ("eval.ks", list(&self.eval.ks)),
            ("eval.mask_history", self.eval.mask_history.to_string()),
            ("eval.split", self.eval.split.name().to_string()),
            ("eval.keep_top", self.eval.keep_top.to_string()),
            ("analysis.tail_fraction", self.analysis.tail_fraction.to_string()),
            ("analysis.popular_size", self.analysis.popular_size.to_string()),
            ("analysis.popularity_basis", basis(self.analysis.popularity_basis).to_string()),
            ("analysis.top_k", self.analysis.top_k.to_string()),
            ("analysis.export_per_group", self.analysis.export_per_group.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// As [`entries`](Self::entries) without `paths.*` and `threads`, so
    /// reports do not depend on where or how wide a run happened.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut e = self.entries();
        e.retain(|k, _| !k.starts_with("paths.") && k != "threads");
        e
    }

    pub fn render(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Cross-field checks that need no files.
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.verbalize.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.train.validate(&self.strategy).map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.threads == 0 {
            return Err(PipelineError::Config("threads must be at least 1".into()));
        }
        if self.preprocess.min_count == 0 {
            return Err(PipelineError::Config("preprocess.min_count must be at least 1".into()));
        }
        if self.item_max_len == 0 {
            return Err(PipelineError::Config("verbalize.item_max_len must be at least 1".into()));
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(PipelineError::Config("eval.ks must be positive cutoffs".into()));
        }
        if !(self.analysis.tail_fraction > 0.0 && self.analysis.tail_fraction < 1.0) {
            return Err(PipelineError::Config("analysis.tail_fraction must lie in (0, 1)".into()));
        }
        if self.analysis.top_k == 0 {
            return Err(PipelineError::Config("analysis.top_k must be at least 1".into()));
        }
        Ok(())
    }

    /// Strategy-specific training settings: the hard stage swaps in its own
    /// learning rate and warmup.
    pub fn effective_train(&self) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed = self.seed;
        if self.strategy.kind == StrategyKind::Hard {
            t.learning_rate = self.hard_lr;
            t.warmup_proportion = self.hard_warmup;
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let mut c = RunConfig::default();
        c.set("strategy.kind", "popular").unwrap();
        c.set("preprocess.min_timestamp", "1546264800").unwrap();
        c.set("verbalize.user_prompt", "true").unwrap();
        c.set("eval.ks", "1, 5,10").unwrap();
        c.set("train.grad_clip", "none").unwrap();
        let back = RunConfig::parse(&c.render()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.eval.ks, [1, 5, 10]);
        assert!(back.verbalize.history_template.contains("{user}"));
    }

    #[test]
    fn comments_aliases_and_errors() {
        let c = RunConfig::parse("# top\nlr = 0.001  # peak\nbatch_size=4\n\nmodel.hidden_dim = 16\n").unwrap();
        assert_eq!(c.train.learning_rate, 0.001);
        assert_eq!(c.train.batch_size, 4);
        assert_eq!(c.model.hidden_dim, 16);
        assert!(RunConfig::parse("nonsense").is_err());
        assert!(RunConfig::parse("model.width = 3").is_err());
        assert!(RunConfig::parse("seed = x").is_err());
    }

    #[test]
    fn hard_stage_uses_its_own_schedule() {
        let mut c = RunConfig::default();
        c.set("strategy.kind", "hard").unwrap();
        let t = c.effective_train();
        assert_eq!(t.learning_rate, 5e-5);
        assert_eq!(t.warmup_proportion, 0.0);
        assert!(!c.echo().contains_key("paths.workdir"));
    }
}
