use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{split_sessions, tokenize, verbalize_history_texts, verbalize_item, SessionBatch, TokenVocab};
use super::{VerbalizeConfig, VerbalizeError};
use crate::corpus::ItemCatalog;

/// `n` sessions of `m` tokens each; histories are truncated to `n·m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionGeometry {
    pub sessions: usize,
    pub session_len: usize,
}

impl SessionGeometry {
    pub fn new(sessions: usize, session_len: usize) -> Self {
        SessionGeometry { sessions, session_len }
    }

    pub fn max_tokens(&self) -> usize {
        self.sessions * self.session_len
    }
}

impl std::str::FromStr for SessionGeometry {
    type Err = String;

    /// Parses `NxM`, e.g. `2x256`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (n, m) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected NxM, got {s:?}"))?;
        let n: usize = n.trim().parse().map_err(|_| format!("bad session count in {s:?}"))?;
        let m: usize = m.trim().parse().map_err(|_| format!("bad session length in {s:?}"))?;
        if n == 0 || m == 0 {
            return Err(format!("session geometry must be positive, got {s:?}"));
        }
        Ok(SessionGeometry::new(n, m))
    }
}

impl std::fmt::Display for SessionGeometry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.sessions, self.session_len)
    }
}

/// Turns catalog items and histories into model inputs. Item texts and
/// tokens are computed once up front.
#[derive(Debug, Clone)]
pub struct Featurizer {
    config: VerbalizeConfig,
    vocab: TokenVocab,
    geometry: SessionGeometry,
    item_max_len: usize,
    item_texts: HashMap<String, String>,
    item_tokens: HashMap<String, Vec<u32>>,
}

impl Featurizer {
    pub fn new(
        catalog: &ItemCatalog,
        config: VerbalizeConfig,
        vocab: TokenVocab,
        geometry: SessionGeometry,
        item_max_len: usize,
    ) -> Result<Self, VerbalizeError> {
        config.validate()?;
        if geometry.sessions == 0 || geometry.session_len == 0 {
            return Err(VerbalizeError::InvalidGeometry { n: geometry.sessions, m: geometry.session_len });
        }
        let mut item_texts = HashMap::with_capacity(catalog.len());
        let mut item_tokens = HashMap::with_capacity(catalog.len());
        for item in catalog.items() {
            let text = verbalize_item(item, &config);
            item_tokens.insert(item.item_id.clone(), tokenize(&text, &vocab, item_max_len).ids);
            item_texts.insert(item.item_id.clone(), text);
        }
        Ok(Featurizer { config, vocab, geometry, item_max_len, item_texts, item_tokens })
    }

    pub fn vocab(&self) -> &TokenVocab {
        &self.vocab
    }

    pub fn geometry(&self) -> SessionGeometry {
        self.geometry
    }

    pub fn item_max_len(&self) -> usize {
        self.item_max_len
    }

    pub fn verbalize_config(&self) -> &VerbalizeConfig {
        &self.config
    }

    pub fn item_text(&self, item_id: &str) -> Option<&str> {
        self.item_texts.get(item_id).map(String::as_str)
    }

    pub fn item_tokens(&self, item_id: &str) -> Option<&[u32]> {
        self.item_tokens.get(item_id).map(Vec::as_slice)
    }

    /// The history string for `prefix` (oldest first). Unknown items
    /// fall back to their bare id.
    pub fn history_text(&self, user_id: &str, prefix: &[String]) -> Result<String, VerbalizeError> {
        let texts: Vec<String> =
            prefix.iter().map(|id| self.item_texts.get(id).cloned().unwrap_or_else(|| format!("id: {id}"))).collect();
        verbalize_history_texts(user_id, &texts, &self.config)
    }

    pub fn history_sessions(&self, user_id: &str, prefix: &[String]) -> Result<SessionBatch, VerbalizeError> {
        let text = self.history_text(user_id, prefix)?;
        let tokens = tokenize(&text, &self.vocab, self.geometry.max_tokens());
        split_sessions(&tokens.ids, self.geometry.sessions, self.geometry.session_len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ItemRecord;
    use crate::verbalize::build_vocab;

    #[test]
    fn geometry_parsing() {
        assert_eq!("2x256".parse::<SessionGeometry>().unwrap(), SessionGeometry::new(2, 256));
        assert!("0x4".parse::<SessionGeometry>().is_err());
        assert!("24".parse::<SessionGeometry>().is_err());
        assert_eq!(SessionGeometry::new(4, 2).to_string(), "4x2");
    }

    #[test]
    fn newest_item_leads_the_sessions() {
        let catalog = ItemCatalog::new(vec![
            ItemRecord::new("1").with_attribute("title", "old"),
            ItemRecord::new("2").with_attribute("title", "new"),
        ]);
        let config = VerbalizeConfig::default();
        let texts: Vec<String> = catalog.items().iter().map(|i| verbalize_item(i, &config)).collect();
        let vocab = build_vocab(&texts, 100).unwrap();
        let f = Featurizer::new(&catalog, config, vocab.clone(), SessionGeometry::new(1, 4), 32).unwrap();
        let b = f.history_sessions("u", &["1".into(), "2".into()]).unwrap();
        // template starts with words outside the vocabulary
        assert_eq!(
            f.history_text("u", &["1".into(), "2".into()]).unwrap(),
            "Here is the visit history list of user: id: 2 title: new, id: 1 title: old recommend next item"
        );
        assert_eq!(b.session_len(), 4);
        assert_eq!(
            f.item_tokens("2").unwrap(),
            &[vocab.id("id"), vocab.id(":"), vocab.id("2"), vocab.id("title"), vocab.id(":"), vocab.id("new")]
        );
    }
}
