//! Item and history verbalization, word-level vocabulary and session splitting.
//!
//! Items become `id: <id> <attr>: <value> ...`. A history becomes its item
//! texts newest-first, joined by `", "` and wrapped in the history template,
//! so that keeping the first tokens on truncation keeps the newest items.

mod featurize;
mod session;
mod vocab;

pub use featurize::{Featurizer, SessionGeometry};

pub use session::{split_sessions, SessionBatch};
pub use vocab::{build_vocab, tokenize, word_tokens, TokenSequence, TokenVocab, DECODER_START, PAD, UNK};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ItemRecord;

#[derive(Debug, Error)]
pub enum VerbalizeError {
    #[error("cannot verbalize an empty history")]
    EmptyHistory,
    #[error("invalid history template: {0}")]
    InvalidTemplate(String),
    #[error("vocabulary max_size must be at least 4, got {0}")]
    VocabTooSmall(usize),
    #[error("invalid session geometry {n}x{m}")]
    InvalidGeometry { n: usize, m: usize },
    #[error("malformed vocabulary file: {0}")]
    MalformedVocab(String),
    #[error("vocabulary i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub const DEFAULT_HISTORY_TEMPLATE: &str = "Here is the visit history list of user: {history} recommend next item";
pub const USER_ID_HISTORY_TEMPLATE: &str = "Here is the visit history list of {user}: {history} recommend next item";

/// Separator between item texts inside a verbalized history.
pub const ITEM_SEPARATOR: &str = ", ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerbalizeConfig {
    pub attribute_names: Vec<String>,
    pub include_item_id: bool,
    pub include_user_id: bool,
    pub history_template: String,
}

impl Default for VerbalizeConfig {
    fn default() -> Self {
        VerbalizeConfig {
            attribute_names: vec!["title".into()],
            include_item_id: true,
            include_user_id: false,
            history_template: DEFAULT_HISTORY_TEMPLATE.into(),
        }
    }
}

impl VerbalizeConfig {
    pub fn with_attributes<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        VerbalizeConfig { attribute_names: names.into_iter().map(Into::into).collect(), ..Default::default() }
    }

    /// The user-id prompt variant: histories read `... list of user_<id>: ...`.
    pub fn with_user_prompt(mut self) -> Self {
        self.include_user_id = true;
        self.history_template = USER_ID_HISTORY_TEMPLATE.into();
        self
    }

    pub fn validate(&self) -> Result<(), VerbalizeError> {
        let history_slots = self.history_template.matches("{history}").count();
        if history_slots != 1 {
            return Err(VerbalizeError::InvalidTemplate(format!(
                "{{history}} must appear exactly once, found {history_slots}"
            )));
        }
        let has_user = self.history_template.contains("{user}");
        if has_user != self.include_user_id {
            return Err(VerbalizeError::InvalidTemplate(
                "{user} must appear if and only if include_user_id is set".into(),
            ));
        }
        Ok(())
    }
}

/// Render one item through the attribute template.
pub fn verbalize_item(item: &ItemRecord, config: &VerbalizeConfig) -> String {
    let mut parts: Vec<String> = Vec::with_capacity(config.attribute_names.len() + 1);
    if config.include_item_id {
        parts.push(format!("id: {}", item.item_id));
    }
    for name in &config.attribute_names {
        if let Some(value) = item.attribute(name) {
            parts.push(format!("{name}: {value}"));
        }
    }
    parts.join(" ")
}

/// Render a history from pre-verbalized item texts given oldest first.
pub fn verbalize_history_texts<S: AsRef<str>>(
    user_id: &str,
    item_texts: &[S],
    config: &VerbalizeConfig,
) -> Result<String, VerbalizeError> {
    if item_texts.is_empty() {
        return Err(VerbalizeError::EmptyHistory);
    }
    let joined = item_texts.iter().rev().map(AsRef::as_ref).collect::<Vec<&str>>().join(ITEM_SEPARATOR);
    let mut text = config.history_template.replacen("{history}", &joined, 1);
    if config.include_user_id {
        text = text.replace("{user}", &format!("user_{user_id}"));
    }
    Ok(text)
}

pub fn verbalize_history(
    user_id: &str,
    items: &[&ItemRecord],
    config: &VerbalizeConfig,
) -> Result<String, VerbalizeError> {
    let texts: Vec<String> = items.iter().map(|i| verbalize_item(i, config)).collect();
    verbalize_history_texts(user_id, &texts, config)
}

/// Every text a vocabulary should cover: each item text plus the history
/// frame with its separator. With a user prompt, one frame per user.
pub fn vocabulary_texts(items: &[ItemRecord], config: &VerbalizeConfig, user_ids: &[&str]) -> Vec<String> {
    let mut texts: Vec<String> = items.iter().map(|i| verbalize_item(i, config)).collect();
    let frame = config.history_template.replacen("{history}", ITEM_SEPARATOR, 1);
    if config.include_user_id {
        texts.extend(user_ids.iter().map(|u| frame.replace("{user}", &format!("user_{u}"))));
    } else {
        texts.push(frame);
    }
    texts
}
