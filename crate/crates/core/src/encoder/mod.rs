//! Compact encoder-decoder transformer producing user and item embeddings.
//!
//! Histories arrive as [`SessionBatch`]es. Each session is encoded on its
//! own, the per-session states are stacked, and a single decoder step from
//! a learned start vector cross-attends over all real tokens. Its final
//! hidden state is the embedding. Items are the one-session special case.
//! Relevance is the plain dot product.

mod checkpoint;
mod graph;
mod model;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use graph::{AttentionKind, AttentionMacs, AttentionMask, Graph, NodeId};
pub use model::Forward;
pub use params::{IdFusion, IdSpace, Layout, ModelConfig, ParamId, Parameters};

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{dot, Matrix};
use crate::verbalize::SessionBatch;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("sessions in a batch must all have the same length")]
    SessionLengthMismatch,
    #[error("sequence of {len} tokens exceeds the positional table of {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {token} outside vocabulary of {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: usize },
    #[error("cannot encode an empty token sequence")]
    EmptySequence,
    #[error("every encoder position is masked")]
    AllMasked,
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("positive index {index} out of range for {candidates} candidates")]
    PositiveOutOfRange { index: usize, candidates: usize },
    #[error("loss batch is malformed: {0}")]
    MalformedBatch(String),
    #[error("tensor shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("tensor {0} contains non-finite values")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// A d-dimensional user or item vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    fn from_row(m: &Matrix) -> Self {
        Embedding(m.row(0).to_vec())
    }
}

/// Stacked per-session encoder outputs, `(n·m) × d`.
#[derive(Debug, Clone)]
pub struct EncoderStates {
    pub states: Matrix,
    pub mask: Vec<bool>,
    /// Multiply-accumulates spent in encoder self-attention.
    pub self_attention_macs: u64,
}

/// Session-split encoding: every session through the encoder separately.
pub fn encode_sessions(params: &Parameters, batch: &SessionBatch) -> Result<EncoderStates, EncoderError> {
    let mut fwd = Forward::new(params);
    let (node, mask) = fwd.encode_sessions(batch)?;
    Ok(EncoderStates {
        states: fwd.graph.value(node).clone(),
        mask,
        self_attention_macs: fwd.graph.attention_macs().encoder_self,
    })
}

/// The same computation as one dense pass with a block-diagonal mask.
pub fn encode_dense_block_diagonal(params: &Parameters, batch: &SessionBatch) -> Result<EncoderStates, EncoderError> {
    let mut fwd = Forward::new(params);
    let (node, mask) = fwd.encode_dense_block_diagonal(batch)?;
    Ok(EncoderStates {
        states: fwd.graph.value(node).clone(),
        mask,
        self_attention_macs: fwd.graph.attention_macs().encoder_self,
    })
}

/// One decoder step over precomputed encoder states.
pub fn decode_representation(params: &Parameters, states: &EncoderStates) -> Result<Embedding, EncoderError> {
    if states.states.cols() != params.config().hidden_dim || states.states.rows() != states.mask.len() {
        return Err(EncoderError::ShapeMismatch(format!(
            "encoder states {:?} with {} mask entries",
            states.states.shape(),
            states.mask.len()
        )));
    }
    let mut fwd = Forward::new(params);
    let s = fwd.graph.constant(states.states.clone());
    let out = fwd.decode(s, &states.mask)?;
    Ok(Embedding::from_row(fwd.graph.value(out)))
}

pub fn encode_history(params: &Parameters, batch: &SessionBatch, user_id: &str) -> Result<Embedding, EncoderError> {
    let mut fwd = Forward::new(params);
    let out = fwd.history_embedding(batch, user_id)?;
    Ok(Embedding::from_row(fwd.graph.value(out)))
}

pub fn encode_item(params: &Parameters, tokens: &[u32], item_id: &str) -> Result<Embedding, EncoderError> {
    let mut fwd = Forward::new(params);
    let out = fwd.item_embedding(tokens, item_id)?;
    Ok(Embedding::from_row(fwd.graph.value(out)))
}

/// Unnormalized dot product.
pub fn score(user: &Embedding, item: &Embedding) -> Result<f64, EncoderError> {
    if user.dim() != item.dim() {
        return Err(EncoderError::DimensionMismatch(user.dim(), item.dim()));
    }
    Ok(dot(&user.0, &item.0))
}

#[derive(Debug, Clone)]
pub struct HistoryInput {
    pub user_id: String,
    pub sessions: SessionBatch,
}

#[derive(Debug, Clone)]
pub struct ItemInput {
    pub item_id: String,
    pub tokens: Vec<u32>,
}

/// Users, a shared candidate list, and each user's positive column.
#[derive(Debug, Clone)]
pub struct LossBatch {
    pub histories: Vec<HistoryInput>,
    pub candidates: Vec<ItemInput>,
    pub positives: Vec<usize>,
    /// Optional per-user candidate support; `None` means all candidates.
    pub allowed: Option<Vec<Vec<bool>>>,
}

impl LossBatch {
    fn validate(&self) -> Result<(), EncoderError> {
        if self.histories.is_empty() || self.candidates.is_empty() {
            return Err(EncoderError::MalformedBatch("empty users or candidates".into()));
        }
        if self.positives.len() != self.histories.len() {
            return Err(EncoderError::MalformedBatch(format!(
                "{} positives for {} users",
                self.positives.len(),
                self.histories.len()
            )));
        }
        if let Some(&index) = self.positives.iter().find(|&&p| p >= self.candidates.len()) {
            return Err(EncoderError::PositiveOutOfRange { index, candidates: self.candidates.len() });
        }
        if let Some(allowed) = &self.allowed {
            let ok = allowed.len() == self.histories.len()
                && allowed.iter().all(|row| row.len() == self.candidates.len())
                && allowed.iter().zip(&self.positives).all(|(row, &p)| row[p]);
            if !ok {
                return Err(EncoderError::MalformedBatch(
                    "allowed mask must be users × candidates and include each positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// A finished forward pass; the tape is the cache for [`backward`].
pub struct ForwardPass<'p> {
    fwd: Forward<'p>,
    loss: NodeId,
    scores: NodeId,
}

impl ForwardPass<'_> {
    pub fn loss(&self) -> f64 {
        self.fwd.graph.value(self.loss).get(0, 0)
    }

    /// Users × candidates dot-product scores.
    pub fn scores(&self) -> &Matrix {
        self.fwd.graph.value(self.scores)
    }

    pub fn attention_macs(&self) -> AttentionMacs {
        self.fwd.graph.attention_macs()
    }
}

fn run_loss<'p>(mut fwd: Forward<'p>, batch: &LossBatch) -> Result<ForwardPass<'p>, EncoderError> {
    batch.validate()?;
    let mut users = Vec::with_capacity(batch.histories.len());
    for h in &batch.histories {
        users.push(fwd.history_embedding(&h.sessions, &h.user_id)?);
    }
    let mut items = Vec::with_capacity(batch.candidates.len());
    for c in &batch.candidates {
        items.push(fwd.item_embedding(&c.tokens, &c.item_id)?);
    }
    let u = fwd.graph.concat_rows(users);
    let v = fwd.graph.concat_rows(items);
    let scores = fwd.graph.matmul_bt(u, v);
    let loss = fwd.graph.cross_entropy(scores, &batch.positives, batch.allowed.as_deref());
    Ok(ForwardPass { fwd, loss, scores })
}

/// Mean softmax cross-entropy of each user's positive among the candidates.
pub fn forward_loss<'p>(params: &'p Parameters, batch: &LossBatch) -> Result<ForwardPass<'p>, EncoderError> {
    run_loss(Forward::new(params), batch)
}

/// As [`forward_loss`] with dropout driven by `rng`.
pub fn forward_loss_training<'p>(
    params: &'p Parameters,
    batch: &LossBatch,
    rng: ChaCha8Rng,
) -> Result<ForwardPass<'p>, EncoderError> {
    run_loss(Forward::training(params, rng), batch)
}

/// Per-parameter gradients, aligned with [`Parameters::tensors`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub tensors: Vec<Matrix>,
}

impl Gradients {
    pub fn global_norm(&self) -> f64 {
        self.tensors.iter().map(Matrix::sum_squares).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            t.scale(factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }
}

/// Exact gradients of the pass's loss with respect to every parameter.
pub fn backward(params: &Parameters, pass: &ForwardPass<'_>) -> Gradients {
    Gradients { tensors: pass.fwd.graph.backward(pass.loss, params) }
}
