//! Forward passes of the encoder-decoder built on the tape.

use rand_chacha::ChaCha8Rng;

use super::graph::{AttentionKind, AttentionMask, Graph, NodeId};
use super::params::{AttentionParams, FfnParams, NormParams, Parameters};
use super::EncoderError;
use crate::verbalize::SessionBatch;

/// Builds forward computations for one set of parameters on one tape.
pub struct Forward<'p> {
    params: &'p Parameters,
    pub graph: Graph,
    dropout: Option<ChaCha8Rng>,
}

impl<'p> Forward<'p> {
    /// Evaluation mode: dropout disabled.
    pub fn new(params: &'p Parameters) -> Self {
        Forward { params, graph: Graph::new(), dropout: None }
    }

    /// Training mode: dropout at the configured rate, driven by `rng`.
    pub fn training(params: &'p Parameters, rng: ChaCha8Rng) -> Self {
        Forward { params, graph: Graph::new(), dropout: Some(rng) }
    }

    pub fn params(&self) -> &'p Parameters {
        self.params
    }

    fn drop(&mut self, x: NodeId) -> NodeId {
        let rate = self.params.config().dropout_rate;
        match &mut self.dropout {
            Some(rng) if rate > 0.0 => self.graph.dropout(x, rate, rng),
            _ => x,
        }
    }

    fn norm(&mut self, x: NodeId, p: NormParams) -> NodeId {
        let gain = self.graph.param(self.params, p.gain);
        let bias = self.graph.param(self.params, p.bias);
        self.graph.layer_norm(x, gain, bias)
    }

    fn project(&mut self, x: NodeId, w: super::params::ParamId) -> NodeId {
        let w = self.graph.param(self.params, w);
        self.graph.matmul(x, w)
    }

    fn attention_block(
        &mut self,
        queries: NodeId,
        memory: NodeId,
        p: AttentionParams,
        mask: &AttentionMask,
        kind: AttentionKind,
    ) -> NodeId {
        let q = self.project(queries, p.wq);
        let k = self.project(memory, p.wk);
        let v = self.project(memory, p.wv);
        let heads = self.params.config().num_heads;
        let mixed = self.graph.attention(q, k, v, mask, heads, kind);
        self.project(mixed, p.wo)
    }

    fn ffn_block(&mut self, x: NodeId, p: FfnParams) -> NodeId {
        let h = self.project(x, p.w1);
        let b1 = self.graph.param(self.params, p.b1);
        let h = self.graph.add_row(h, b1);
        let h = self.graph.gelu(h);
        let h = self.project(h, p.w2);
        let b2 = self.graph.param(self.params, p.b2);
        self.graph.add_row(h, b2)
    }

    /// Pre-norm encoder stack over one token sequence.
    pub fn encoder_stack(
        &mut self,
        token_ids: &[u32],
        positions: &[usize],
        mask: &AttentionMask,
    ) -> Result<NodeId, EncoderError> {
        let config = self.params.config();
        if let Some(&bad) = token_ids.iter().find(|&&t| t as usize >= config.vocab_size) {
            return Err(EncoderError::TokenOutOfRange { token: bad, vocab_size: config.vocab_size });
        }
        if let Some(&bad) = positions.iter().find(|&&p| p >= config.max_session_len) {
            return Err(EncoderError::SequenceTooLong { len: bad + 1, max: config.max_session_len });
        }
        let layout = self.params.layout().clone();
        let tok_table = self.graph.param(self.params, layout.token_embedding);
        let pos_table = self.graph.param(self.params, layout.position_embedding);
        let tok = self.graph.gather(tok_table, token_ids.iter().map(|&t| t as usize).collect());
        let pos = self.graph.gather(pos_table, positions.to_vec());
        let mut x = self.graph.add(tok, pos);
        for layer in &layout.encoder {
            let h = self.norm(x, layer.attn_norm);
            let a = self.attention_block(h, h, layer.attn, mask, AttentionKind::EncoderSelf);
            let a = self.drop(a);
            x = self.graph.add(x, a);
            let h = self.norm(x, layer.ffn_norm);
            let f = self.ffn_block(h, layer.ffn);
            let f = self.drop(f);
            x = self.graph.add(x, f);
        }
        Ok(self.norm(x, layout.encoder_norm))
    }

    fn check_sessions(&self, batch: &SessionBatch) -> Result<(), EncoderError> {
        let m = batch.session_len();
        if batch.sessions().iter().any(|s| s.len() != m) {
            return Err(EncoderError::SessionLengthMismatch);
        }
        if m > self.params.config().max_session_len {
            return Err(EncoderError::SequenceTooLong { len: m, max: self.params.config().max_session_len });
        }
        Ok(())
    }

    /// Encode each session on its own (positions restart at 0, attention
    /// confined to the session's real tokens) and stack the outputs.
    pub fn encode_sessions(&mut self, batch: &SessionBatch) -> Result<(NodeId, Vec<bool>), EncoderError> {
        self.check_sessions(batch)?;
        let m = batch.session_len();
        let positions: Vec<usize> = (0..m).collect();
        let mut parts = Vec::with_capacity(batch.num_sessions());
        for (tokens, mask) in batch.sessions().iter().zip(batch.attention_mask()) {
            let attn = AttentionMask::key_padding(m, mask);
            parts.push(self.encoder_stack(tokens, &positions, &attn)?);
        }
        let states = if parts.len() == 1 { parts[0] } else { self.graph.concat_rows(parts) };
        Ok((states, batch.attention_mask().concat()))
    }

    /// One dense pass over all `n·m` tokens with a block-diagonal mask and
    /// per-session position reset; the reference for [`Self::encode_sessions`].
    pub fn encode_dense_block_diagonal(&mut self, batch: &SessionBatch) -> Result<(NodeId, Vec<bool>), EncoderError> {
        self.check_sessions(batch)?;
        let m = batch.session_len();
        let tokens = batch.sessions().concat();
        let key_mask = batch.attention_mask().concat();
        let positions: Vec<usize> = (0..tokens.len()).map(|i| i % m).collect();
        let attn = AttentionMask::from_fn(tokens.len(), tokens.len(), |q, k| q / m == k / m && key_mask[k]);
        let states = self.encoder_stack(&tokens, &positions, &attn)?;
        Ok((states, key_mask))
    }

    /// Single decoder step from the start embedding, cross-attending over
    /// the unmasked encoder states. Returns a 1×d node.
    pub fn decode(&mut self, states: NodeId, mask: &[bool]) -> Result<NodeId, EncoderError> {
        if !mask.iter().any(|&k| k) {
            return Err(EncoderError::AllMasked);
        }
        let layout = self.params.layout().clone();
        let mut y = self.graph.param(self.params, layout.decoder_start);
        let self_mask = AttentionMask::key_padding(1, &[true]);
        let cross_mask = AttentionMask::key_padding(1, mask);
        for layer in &layout.decoder {
            let h = self.norm(y, layer.self_norm);
            let a = self.attention_block(h, h, layer.self_attn, &self_mask, AttentionKind::DecoderSelf);
            let a = self.drop(a);
            y = self.graph.add(y, a);
            let h = self.norm(y, layer.cross_norm);
            let c = self.attention_block(h, states, layer.cross_attn, &cross_mask, AttentionKind::Cross);
            let c = self.drop(c);
            y = self.graph.add(y, c);
            let h = self.norm(y, layer.ffn_norm);
            let f = self.ffn_block(h, layer.ffn);
            let f = self.drop(f);
            y = self.graph.add(y, f);
        }
        Ok(self.norm(y, layout.decoder_norm))
    }

    fn add_id_embedding(&mut self, x: NodeId, table: Option<super::params::ParamId>, row: Option<usize>) -> NodeId {
        match (table, row) {
            (Some(table), Some(row)) => {
                let t = self.graph.param(self.params, table);
                let e = self.graph.gather(t, vec![row]);
                self.graph.add(x, e)
            }
            _ => x,
        }
    }

    /// User representation of a session-split history.
    pub fn history_embedding(&mut self, batch: &SessionBatch, user_id: &str) -> Result<NodeId, EncoderError> {
        let (states, mask) = self.encode_sessions(batch)?;
        let h = self.decode(states, &mask)?;
        let table = self.params.layout().user_id_embedding;
        let row = self.params.user_row(user_id);
        Ok(self.add_id_embedding(h, table, row))
    }

    /// Item representation: one session holding the item's tokens.
    pub fn item_embedding(&mut self, tokens: &[u32], item_id: &str) -> Result<NodeId, EncoderError> {
        if tokens.is_empty() {
            return Err(EncoderError::EmptySequence);
        }
        let max = self.params.config().max_session_len;
        if tokens.len() > max {
            return Err(EncoderError::SequenceTooLong { len: tokens.len(), max });
        }
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let attn = AttentionMask::key_padding(tokens.len(), &vec![true; tokens.len()]);
        let states = self.encoder_stack(tokens, &positions, &attn)?;
        let h = self.decode(states, &vec![true; tokens.len()])?;
        let table = self.params.layout().item_id_embedding;
        let row = self.params.item_row(item_id);
        Ok(self.add_id_embedding(h, table, row))
    }
}
