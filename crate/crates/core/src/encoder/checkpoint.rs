//! Structured-text checkpoints.
//!
//! ```text
//! TASTE-CKPT-1
//! config {"vocab_size":...}
//! meta <key> <value>
//! items <count>
//! <item id per line>
//! users <count>
//! <user id per line>
//! tensors <count>
//! tensor <name> <rows> <cols>
//! <one line of space-separated values per row>
//! end
//! ```
//!
//! Values are written in shortest round-trip form, so save → load is exact
//! and identical parameters always produce identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::params::{IdSpace, ModelConfig, Parameters};
use super::EncoderError;
use crate::tensor::Matrix;

pub const CHECKPOINT_MAGIC: &str = "TASTE-CKPT-1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: Parameters,
    /// Free-form string metadata (vocab fingerprint, training stage, ...).
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(params: Parameters) -> Self {
        Checkpoint { params, meta: BTreeMap::new() }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut out = String::new();
        out.push_str(CHECKPOINT_MAGIC);
        out.push('\n');
        let config = serde_json::to_string(p.config()).expect("config serializes");
        let _ = writeln!(out, "config {config}");
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (label, ids) in [("items", &p.ids().items), ("users", &p.ids().users)] {
            let _ = writeln!(out, "{label} {}", ids.len());
            for id in ids {
                out.push_str(id);
                out.push('\n');
            }
        }
        let _ = writeln!(out, "tensors {}", p.tensors().len());
        for (name, t) in p.names().iter().zip(p.tensors()) {
            let _ = writeln!(out, "tensor {name} {} {}", t.rows(), t.cols());
            for r in 0..t.rows() {
                let row = t.row(r);
                for (i, v) in row.iter().enumerate() {
                    if i > 0 {
                        out.push(' ');
                    }
                    let _ = write!(out, "{v:e}");
                }
                out.push('\n');
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn parse(text: &str) -> Result<Self, EncoderError> {
        let bad = |msg: String| EncoderError::Checkpoint(msg);
        let mut lines = text.lines();
        let mut next = |what: &str| lines.next().ok_or_else(|| bad(format!("truncated before {what}")));

        if next("magic")? != CHECKPOINT_MAGIC {
            return Err(bad(format!("missing {CHECKPOINT_MAGIC} header")));
        }
        let config_line = next("config")?;
        let config: ModelConfig = config_line
            .strip_prefix("config ")
            .ok_or_else(|| bad("expected config line".into()))
            .and_then(|json| serde_json::from_str(json).map_err(|e| bad(e.to_string())))?;

        let mut meta = BTreeMap::new();
        let mut line = next("items")?;
        while let Some(rest) = line.strip_prefix("meta ") {
            let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
            meta.insert(k.to_string(), v.to_string());
            line = next("items")?;
        }

        let items = read_ids(line, "items ", &mut next)?;
        let users_header = next("users")?;
        let users = read_ids(users_header, "users ", &mut next)?;

        let count: usize = next("tensors")?
            .strip_prefix("tensors ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("expected `tensors <count>`".into()))?;
        let mut named = Vec::with_capacity(count);
        for _ in 0..count {
            let header = next("tensor")?;
            let parts: Vec<&str> = header.split(' ').collect();
            if parts.len() != 4 || parts[0] != "tensor" {
                return Err(bad(format!("bad tensor header {header:?}")));
            }
            let rows: usize = parts[2].parse().map_err(|_| bad(format!("bad rows in {header:?}")))?;
            let cols: usize = parts[3].parse().map_err(|_| bad(format!("bad cols in {header:?}")))?;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let row = next(parts[1])?;
                for v in row.split(' ').filter(|s| !s.is_empty()) {
                    data.push(v.parse::<f64>().map_err(|_| bad(format!("bad value {v:?} in {}", parts[1])))?);
                }
            }
            if data.len() != rows * cols {
                return Err(bad(format!("tensor {} has {} values, expected {}", parts[1], data.len(), rows * cols)));
            }
            named.push((parts[1].to_string(), Matrix::from_vec(rows, cols, data)));
        }
        if next("end")? != "end" {
            return Err(bad("missing end marker".into()));
        }
        let params = Parameters::from_named_tensors(&config, IdSpace { items, users }, named)?;
        Ok(Checkpoint { params, meta })
    }
}

fn read_ids<'a>(
    header: &str,
    label: &str,
    next: &mut impl FnMut(&str) -> Result<&'a str, EncoderError>,
) -> Result<Vec<String>, EncoderError> {
    let count: usize = header
        .strip_prefix(label)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| EncoderError::Checkpoint(format!("expected `{label}<count>`, found {header:?}")))?;
    (0..count).map(|_| next(label).map(str::to_string)).collect()
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<(), EncoderError> {
    fs::write(path, checkpoint.to_text())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, EncoderError> {
    Checkpoint::parse(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::IdFusion;

    fn config() -> ModelConfig {
        ModelConfig {
            vocab_size: 20,
            hidden_dim: 4,
            num_heads: 2,
            ffn_dim: 8,
            encoder_layers: 1,
            decoder_layers: 1,
            max_session_len: 6,
            dropout_rate: 0.0,
            id_fusion: IdFusion::Embed,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ids = IdSpace { items: vec!["i1".into(), "i2".into()], users: vec!["u1".into()] };
        let params = Parameters::init_with_ids(&config(), ids, 11).unwrap();
        let ckpt = Checkpoint::new(params).with_meta("vocab_fingerprint", "abc");
        let text = ckpt.to_text();
        assert!(text.starts_with("TASTE-CKPT-1\n"));
        let back = Checkpoint::parse(&text).unwrap();
        assert_eq!(back.params.tensors(), ckpt.params.tensors());
        assert_eq!(back.params.ids(), ckpt.params.ids());
        assert_eq!(back.meta["vocab_fingerprint"], "abc");
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn rejects_bad_headers_and_shapes() {
        assert!(Checkpoint::parse("NOT-A-CKPT\n").is_err());
        let params = Parameters::init(&config(), 1).unwrap();
        let text = Checkpoint::new(params).to_text();
        let tampered = text.replacen("tensor token_embedding 20 4", "tensor token_embedding 19 4", 1);
        assert!(Checkpoint::parse(&tampered).is_err());
    }
}
