//! A minimal reverse-mode tape over [`Matrix`] values.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is a
//! valid topological order for gradient propagation. Attention, layer
//! normalization and softmax cross-entropy are fused ops with hand-derived
//! backward rules.

use std::collections::HashMap;

use rand::Rng;

use super::params::{ParamId, Parameters};
use crate::tensor::{dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Which attention a multiply-accumulate count belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    EncoderSelf,
    DecoderSelf,
    Cross,
}

/// Multiply-accumulate counts of the attention score and mixing products.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AttentionMacs {
    pub encoder_self: u64,
    pub decoder_self: u64,
    pub cross: u64,
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

enum Op {
    Leaf,
    Gather { table: NodeId, ids: Vec<usize> },
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    MatMulBT(NodeId, NodeId),
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, normed: Matrix, inv_std: Vec<f64> },
    Gelu(NodeId),
    Dropout { x: NodeId, keep: Vec<f64> },
    ConcatRows(Vec<NodeId>),
    Attention { q: NodeId, k: NodeId, v: NodeId, heads: usize, probs: Vec<Matrix> },
    CrossEntropy { scores: NodeId, targets: Vec<usize>, probs: Matrix },
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Attention mask: `allowed[q * keys + k]` says whether query `q` may
/// attend to key `k`.
#[derive(Debug, Clone)]
pub struct AttentionMask {
    queries: usize,
    keys: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    /// Every query sees the same set of keys.
    pub fn key_padding(queries: usize, key_mask: &[bool]) -> Self {
        let keys = key_mask.len();
        let mut allowed = Vec::with_capacity(queries * keys);
        for _ in 0..queries {
            allowed.extend_from_slice(key_mask);
        }
        AttentionMask { queries, keys, allowed }
    }

    pub fn from_fn(queries: usize, keys: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allowed = Vec::with_capacity(queries * keys);
        for q in 0..queries {
            for k in 0..keys {
                allowed.push(f(q, k));
            }
        }
        AttentionMask { queries, keys, allowed }
    }

    #[inline]
    pub fn allows(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.keys + k]
    }
}

pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
    macs: AttentionMacs,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), param_nodes: HashMap::new(), macs: AttentionMacs::default() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn attention_macs(&self) -> AttentionMacs {
        self.macs
    }

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Leaf for a parameter tensor; repeated requests share one node.
    pub fn param(&mut self, params: &Parameters, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_nodes.get(&id) {
            return node;
        }
        let node = self.push(params.tensor(id).clone(), Op::Leaf);
        self.param_nodes.insert(id, node);
        node
    }

    pub fn gather(&mut self, table: NodeId, ids: Vec<usize>) -> NodeId {
        let t = self.value(table);
        let d = t.cols();
        let mut out = Matrix::zeros(ids.len(), d);
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(id));
        }
        self.push(out, Op::Gather { table, ids })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// `x + row` with `row` (1×c) broadcast over every row of `x`.
    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        let bias = self.value(row);
        assert_eq!(bias.shape(), (1, out.cols()), "add_row bias shape");
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bias.as_slice()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(x, row))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.value(a).matmul_bt(self.value(b));
        self.push(out, Op::MatMulBT(a, b))
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut normed = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, v) in normed.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let g = self.value(gain).as_slice();
        let b = self.value(bias).as_slice();
        let mut out = normed.clone();
        for r in 0..rows {
            for ((o, gv), bv) in out.row_mut(r).iter_mut().zip(g).zip(b) {
                *o = *o * gv + bv;
            }
        }
        self.push(out, Op::LayerNorm { x, gain, bias, normed, inv_std })
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        for v in out.as_mut_slice() {
            *v = gelu(*v);
        }
        self.push(out, Op::Gelu(x))
    }

    /// Inverted dropout; `rate == 0` returns `x` untouched.
    pub fn dropout<R: Rng>(&mut self, x: NodeId, rate: f64, rng: &mut R) -> NodeId {
        if rate <= 0.0 {
            return x;
        }
        let scale = 1.0 / (1.0 - rate);
        let keep: Vec<f64> =
            (0..self.value(x).len()).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { scale }).collect();
        let mut out = self.value(x).clone();
        for (o, k) in out.as_mut_slice().iter_mut().zip(&keep) {
            *o *= k;
        }
        self.push(out, Op::Dropout { x, keep })
    }

    pub fn concat_rows(&mut self, parts: Vec<NodeId>) -> NodeId {
        let values: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Matrix::concat_rows(&values);
        self.push(out, Op::ConcatRows(parts))
    }

    /// Multi-head scaled dot-product attention. Disallowed pairs get exactly
    /// zero weight; a query with no allowed key produces a zero row.
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        mask: &AttentionMask,
        heads: usize,
        kind: AttentionKind,
    ) -> NodeId {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (lq, d) = qv.shape();
        let lk = kv.rows();
        assert_eq!(kv.cols(), d);
        assert_eq!(vv.shape(), (lk, d));
        assert_eq!((mask.queries, mask.keys), (lq, lk), "attention mask shape");
        assert_eq!(d % heads, 0);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut out = Matrix::zeros(lq, d);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let mut p = Matrix::zeros(lq, lk);
            for i in 0..lq {
                let qi = &qv.row(i)[cols.clone()];
                let row = p.row_mut(i);
                let mut max = f64::NEG_INFINITY;
                for (j, slot) in row.iter_mut().enumerate() {
                    if mask.allows(i, j) {
                        *slot = dot(qi, &kv.row(j)[cols.clone()]) * scale;
                        max = max.max(*slot);
                    }
                }
                if max == f64::NEG_INFINITY {
                    continue;
                }
                let mut sum = 0.0;
                for (j, slot) in row.iter_mut().enumerate() {
                    if mask.allows(i, j) {
                        *slot = (*slot - max).exp();
                        sum += *slot;
                    }
                }
                for slot in row.iter_mut() {
                    *slot /= sum;
                }
                let o = &mut out.row_mut(i)[cols.clone()];
                for (j, &w) in row.iter().enumerate() {
                    if w != 0.0 {
                        for (oc, vc) in o.iter_mut().zip(&vv.row(j)[cols.clone()]) {
                            *oc += w * vc;
                        }
                    }
                }
            }
            probs.push(p);
        }

        // scores (q·k) and mixing (p·v), every query-key pair, all heads
        let macs = 2 * (lq * lk * d) as u64;
        match kind {
            AttentionKind::EncoderSelf => self.macs.encoder_self += macs,
            AttentionKind::DecoderSelf => self.macs.decoder_self += macs,
            AttentionKind::Cross => self.macs.cross += macs,
        }
        self.push(out, Op::Attention { q, k, v, heads, probs })
    }

    /// Mean softmax cross-entropy of each score row against its target
    /// column. `allowed`, when given, restricts each row's softmax support.
    pub fn cross_entropy(&mut self, scores: NodeId, targets: &[usize], allowed: Option<&[Vec<bool>]>) -> NodeId {
        let s = self.value(scores);
        let (rows, cols) = s.shape();
        assert_eq!(targets.len(), rows);
        let mut probs = Matrix::zeros(rows, cols);
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let ok = |j: usize| allowed.map_or(true, |a| a[i][j]);
            let row = s.row(i);
            let max = (0..cols).filter(|&j| ok(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = (0..cols).filter(|&j| ok(j)).map(|j| (row[j] - max).exp()).sum();
            let log_z = max + sum.ln();
            total += log_z - row[t];
            for j in (0..cols).filter(|&j| ok(j)) {
                probs.set(i, j, (row[j] - log_z).exp());
            }
        }
        let loss = Matrix::from_vec(1, 1, vec![total / rows as f64]);
        self.push(loss, Op::CrossEntropy { scores, targets: targets.to_vec(), probs })
    }

    /// Gradients of the scalar at `output` with respect to every parameter
    /// leaf, aligned with `params`. Unused parameters get zeros.
    pub fn backward(&self, output: NodeId, params: &Parameters) -> Vec<Matrix> {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        let out_value = self.value(output);
        grads[output.0] = Some(Matrix::filled(out_value.rows(), out_value.cols(), 1.0));

        for idx in (0..=output.0).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(grad);
                }
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let mut g = Matrix::zeros(t.rows(), t.cols());
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, v) in g.row_mut(id).iter_mut().zip(grad.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *table, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, grad.clone());
                    accumulate(&mut grads, *b, grad);
                }
                Op::AddRow(x, row) => {
                    let mut g_row = Matrix::zeros(1, grad.cols());
                    for r in 0..grad.rows() {
                        for (o, v) in g_row.as_mut_slice().iter_mut().zip(grad.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *row, g_row);
                    accumulate(&mut grads, *x, grad);
                }
                Op::MatMul(a, b) => {
                    let ga = grad.matmul_bt(self.value(*b));
                    let gb = self.value(*a).matmul_at(&grad);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulBT(a, b) => {
                    // out = a·bᵀ: da = g·b, db = gᵀ·a
                    let ga = grad.matmul(self.value(*b));
                    let gb = grad.matmul_at(self.value(*a));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::LayerNorm { x, gain, bias, normed, inv_std } => {
                    let g = self.value(*gain).as_slice();
                    let (rows, cols) = normed.shape();
                    let mut g_gain = Matrix::zeros(1, cols);
                    let mut g_bias = Matrix::zeros(1, cols);
                    let mut gx = Matrix::zeros(rows, cols);
                    let n = cols as f64;
                    for r in 0..rows {
                        let dy = grad.row(r);
                        let xh = normed.row(r);
                        let mut mean_dxh = 0.0;
                        let mut mean_dxh_xh = 0.0;
                        for c in 0..cols {
                            g_gain.as_mut_slice()[c] += dy[c] * xh[c];
                            g_bias.as_mut_slice()[c] += dy[c];
                            let dxh = dy[c] * g[c];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * xh[c];
                        }
                        mean_dxh /= n;
                        mean_dxh_xh /= n;
                        let out = gx.row_mut(r);
                        for c in 0..cols {
                            let dxh = dy[c] * g[c];
                            out[c] = inv_std[r] * (dxh - mean_dxh - xh[c] * mean_dxh_xh);
                        }
                    }
                    accumulate(&mut grads, *gain, g_gain);
                    accumulate(&mut grads, *bias, g_bias);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Gelu(x) => {
                    let mut g = grad;
                    for (gv, xv) in g.as_mut_slice().iter_mut().zip(self.value(*x).as_slice()) {
                        *gv *= gelu_grad(*xv);
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::Dropout { x, keep } => {
                    let mut g = grad;
                    for (gv, k) in g.as_mut_slice().iter_mut().zip(keep) {
                        *gv *= k;
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        accumulate(&mut grads, p, grad.slice_rows(start, start + rows));
                        start += rows;
                    }
                }
                Op::Attention { q, k, v, heads, probs } => {
                    let (gq, gk, gv) = self.attention_backward(*q, *k, *v, *heads, probs, &grad);
                    accumulate(&mut grads, *q, gq);
                    accumulate(&mut grads, *k, gk);
                    accumulate(&mut grads, *v, gv);
                }
                Op::CrossEntropy { scores, targets, probs } => {
                    let upstream = grad.get(0, 0);
                    let rows = targets.len() as f64;
                    let mut g = probs.clone();
                    for (i, &t) in targets.iter().enumerate() {
                        let cur = g.get(i, t);
                        g.set(i, t, cur - 1.0);
                    }
                    g.scale(upstream / rows);
                    accumulate(&mut grads, *scores, g);
                }
            }
        }

        let mut out: Vec<Matrix> = params.tensors().iter().map(|t| Matrix::zeros(t.rows(), t.cols())).collect();
        for (pid, node) in &self.param_nodes {
            if let Some(g) = grads[node.0].take() {
                out[pid.index()] = g;
            }
        }
        out
    }

    fn attention_backward(
        &self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        probs: &[Matrix],
        grad: &Matrix,
    ) -> (Matrix, Matrix, Matrix) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (lq, d) = qv.shape();
        let lk = kv.rows();
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut gq = Matrix::zeros(lq, d);
        let mut gk = Matrix::zeros(lk, d);
        let mut gv = Matrix::zeros(lk, d);
        for (h, p) in probs.iter().enumerate() {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..lq {
                let go = &grad.row(i)[cols.clone()];
                let p_row = p.row(i);
                // dP_ij = go · v_j ; dS_ij = P_ij (dP_ij − Σ_k P_ik dP_ik)
                let mut dp = vec![0.0; lk];
                let mut weighted = 0.0;
                for j in 0..lk {
                    if p_row[j] != 0.0 {
                        dp[j] = dot(go, &vv.row(j)[cols.clone()]);
                        weighted += p_row[j] * dp[j];
                        let gv_row = &mut gv.row_mut(j)[cols.clone()];
                        for (g, o) in gv_row.iter_mut().zip(go) {
                            *g += p_row[j] * o;
                        }
                    }
                }
                for j in 0..lk {
                    if p_row[j] == 0.0 {
                        continue;
                    }
                    let ds = p_row[j] * (dp[j] - weighted) * scale;
                    let k_row = &kv.row(j)[cols.clone()];
                    let gq_row = &mut gq.row_mut(i)[cols.clone()];
                    for (g, kc) in gq_row.iter_mut().zip(k_row) {
                        *g += ds * kc;
                    }
                    let q_row = &qv.row(i)[cols.clone()];
                    let gk_row = &mut gk.row_mut(j)[cols.clone()];
                    for (g, qc) in gk_row.iter_mut().zip(q_row) {
                        *g += ds * qc;
                    }
                }
            }
        }
        (gq, gk, gv)
    }
}

fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}
