use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::VerbalizeError;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const DECODER_START: u32 = 2;

const SPECIALS: [&str; 3] = ["<pad>", "<unk>", "<s>"];

/// Split on whitespace, then break every non-alphanumeric character out
/// into its own token.
pub fn word_tokens(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut start = None;
        for (i, c) in chunk.char_indices() {
            if c.is_alphanumeric() {
                start.get_or_insert(i);
            } else {
                if let Some(s) = start.take() {
                    out.push(&chunk[s..i]);
                }
                out.push(&chunk[i..i + c.len_utf8()]);
            }
        }
        if let Some(s) = start {
            out.push(&chunk[s..]);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenVocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl TokenVocab {
    fn from_tokens(words: Vec<String>) -> Self {
        let tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).chain(words).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        TokenVocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Header line of specials, then one token per line starting at id 3.
    pub fn to_file_string(&self) -> String {
        let mut out = SPECIALS.join("\t");
        out.push('\n');
        for t in &self.tokens[SPECIALS.len()..] {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_file_string().as_bytes()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), VerbalizeError> {
        fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, VerbalizeError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| VerbalizeError::MalformedVocab("missing header".into()))?;
        if header.split('\t').collect::<Vec<_>>() != SPECIALS {
            return Err(VerbalizeError::MalformedVocab(format!("unexpected header {header:?}")));
        }
        let words: Vec<String> = lines.map(str::to_string).collect();
        if let Some(w) = words.iter().find(|w| w.is_empty() || w.contains(char::is_whitespace)) {
            return Err(VerbalizeError::MalformedVocab(format!("bad token {w:?}")));
        }
        let vocab = TokenVocab::from_tokens(words);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(VerbalizeError::MalformedVocab("duplicate token".into()));
        }
        Ok(vocab)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VerbalizeError> {
        TokenVocab::parse(&fs::read_to_string(path)?)
    }
}

/// Most frequent tokens first, ties broken lexicographically; keeps
/// `max_size − 3` words after the specials.
pub fn build_vocab<S: AsRef<str>>(texts: &[S], max_size: usize) -> Result<TokenVocab, VerbalizeError> {
    if max_size < 4 {
        return Err(VerbalizeError::VocabTooSmall(max_size));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for text in texts {
        for tok in word_tokens(text.as_ref()) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    for s in SPECIALS {
        counts.remove(s);
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size - SPECIALS.len());
    Ok(TokenVocab::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string()).collect()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    /// Token count before truncation.
    pub original_length: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Map words to ids (unknown words to `UNK`) and keep the first `max_len`.
pub fn tokenize(text: &str, vocab: &TokenVocab, max_len: usize) -> TokenSequence {
    let words = word_tokens(text);
    let original_length = words.len();
    let ids = words.into_iter().take(max_len).map(|w| vocab.id(w)).collect();
    TokenSequence { ids, original_length }
}
