use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::EncoderError;
use crate::tensor::Matrix;

/// Whether learned user/item id embeddings are added to the text embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum IdFusion {
    #[default]
    Off,
    Embed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    /// Rows of the positional table; bounds both session and item length.
    pub max_session_len: usize,
    pub dropout_rate: f64,
    pub id_fusion: IdFusion,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 8192,
            hidden_dim: 64,
            num_heads: 4,
            ffn_dim: 128,
            encoder_layers: 2,
            decoder_layers: 1,
            max_session_len: 64,
            dropout_rate: 0.0,
            id_fusion: IdFusion::Off,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("hidden_dim", self.hidden_dim),
            ("num_heads", self.num_heads),
            ("ffn_dim", self.ffn_dim),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("max_session_len", self.max_session_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(EncoderError::InvalidConfig(format!("{name} must be at least 1")));
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(EncoderError::InvalidConfig(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(EncoderError::InvalidConfig(format!("dropout_rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct FfnParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderLayerParams {
    pub attn_norm: NormParams,
    pub attn: AttentionParams,
    pub ffn_norm: NormParams,
    pub ffn: FfnParams,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderLayerParams {
    pub self_norm: NormParams,
    pub self_attn: AttentionParams,
    pub cross_norm: NormParams,
    pub cross_attn: AttentionParams,
    pub ffn_norm: NormParams,
    pub ffn: FfnParams,
}

/// Where each named tensor lives in the flat parameter list.
#[derive(Debug, Clone)]
pub struct Layout {
    pub token_embedding: ParamId,
    pub position_embedding: ParamId,
    pub encoder: Vec<EncoderLayerParams>,
    pub encoder_norm: NormParams,
    pub decoder_start: ParamId,
    pub decoder: Vec<DecoderLayerParams>,
    pub decoder_norm: NormParams,
    pub item_id_embedding: Option<ParamId>,
    pub user_id_embedding: Option<ParamId>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Normal(f64),
    Ones,
    Zeros,
}

struct TensorDecl {
    name: String,
    rows: usize,
    cols: usize,
    init: Init,
}

#[derive(Default)]
struct LayoutBuilder {
    decls: Vec<TensorDecl>,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> ParamId {
        self.decls.push(TensorDecl { name, rows, cols, init });
        ParamId(self.decls.len() - 1)
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormParams {
        NormParams {
            gain: self.add(format!("{prefix}.gain"), 1, d, Init::Ones),
            bias: self.add(format!("{prefix}.bias"), 1, d, Init::Zeros),
        }
    }

    fn attention(&mut self, prefix: &str, d: usize) -> AttentionParams {
        let std = (d as f64).powf(-0.5);
        AttentionParams {
            wq: self.add(format!("{prefix}.wq"), d, d, Init::Normal(std)),
            wk: self.add(format!("{prefix}.wk"), d, d, Init::Normal(std)),
            wv: self.add(format!("{prefix}.wv"), d, d, Init::Normal(std)),
            wo: self.add(format!("{prefix}.wo"), d, d, Init::Normal(std)),
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, f: usize) -> FfnParams {
        FfnParams {
            w1: self.add(format!("{prefix}.w1"), d, f, Init::Normal((d as f64).powf(-0.5))),
            b1: self.add(format!("{prefix}.b1"), 1, f, Init::Zeros),
            w2: self.add(format!("{prefix}.w2"), f, d, Init::Normal((f as f64).powf(-0.5))),
            b2: self.add(format!("{prefix}.b2"), 1, d, Init::Zeros),
        }
    }
}

fn build_layout(config: &ModelConfig, num_items: usize, num_users: usize) -> (Layout, Vec<TensorDecl>) {
    let d = config.hidden_dim;
    let f = config.ffn_dim;
    let emb_std = (d as f64).powf(-0.5);
    let mut b = LayoutBuilder::default();
    let token_embedding = b.add("token_embedding".into(), config.vocab_size, d, Init::Normal(emb_std));
    let position_embedding = b.add("position_embedding".into(), config.max_session_len, d, Init::Normal(emb_std));
    let encoder = (0..config.encoder_layers)
        .map(|l| EncoderLayerParams {
            attn_norm: b.norm(&format!("encoder.{l}.attn_norm"), d),
            attn: b.attention(&format!("encoder.{l}.attn"), d),
            ffn_norm: b.norm(&format!("encoder.{l}.ffn_norm"), d),
            ffn: b.ffn(&format!("encoder.{l}.ffn"), d, f),
        })
        .collect();
    let encoder_norm = b.norm("encoder.final_norm", d);
    let decoder_start = b.add("decoder.start".into(), 1, d, Init::Normal(emb_std));
    let decoder = (0..config.decoder_layers)
        .map(|l| DecoderLayerParams {
            self_norm: b.norm(&format!("decoder.{l}.self_norm"), d),
            self_attn: b.attention(&format!("decoder.{l}.self_attn"), d),
            cross_norm: b.norm(&format!("decoder.{l}.cross_norm"), d),
            cross_attn: b.attention(&format!("decoder.{l}.cross_attn"), d),
            ffn_norm: b.norm(&format!("decoder.{l}.ffn_norm"), d),
            ffn: b.ffn(&format!("decoder.{l}.ffn"), d, f),
        })
        .collect();
    let decoder_norm = b.norm("decoder.final_norm", d);
    let (item_id_embedding, user_id_embedding) = match config.id_fusion {
        IdFusion::Off => (None, None),
        IdFusion::Embed => (
            Some(b.add("item_id_embedding".into(), num_items, d, Init::Normal(emb_std))),
            Some(b.add("user_id_embedding".into(), num_users, d, Init::Normal(emb_std))),
        ),
    };
    let layout = Layout {
        token_embedding,
        position_embedding,
        encoder,
        encoder_norm,
        decoder_start,
        decoder,
        decoder_norm,
        item_id_embedding,
        user_id_embedding,
    };
    (layout, b.decls)
}

/// Ordered ids backing the optional id-embedding tables.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdSpace {
    pub items: Vec<String>,
    pub users: Vec<String>,
}

/// All model weights as named row-major tensors.
#[derive(Debug, Clone)]
pub struct Parameters {
    config: ModelConfig,
    layout: Layout,
    names: Vec<String>,
    tensors: Vec<Matrix>,
    ids: IdSpace,
    item_index: HashMap<String, usize>,
    user_index: HashMap<String, usize>,
}

impl Parameters {
    /// Seeded initialization; no id tables are allocated rows.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, EncoderError> {
        Self::init_with_ids(config, IdSpace::default(), seed)
    }

    /// Normal weights scaled by `1/sqrt(fan_in)`, normalization gains 1,
    /// biases 0. The result depends only on `(config, ids, seed)`.
    pub fn init_with_ids(config: &ModelConfig, ids: IdSpace, seed: u64) -> Result<Self, EncoderError> {
        config.validate()?;
        let (layout, decls) = build_layout(config, ids.items.len(), ids.users.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::with_capacity(decls.len());
        let mut tensors = Vec::with_capacity(decls.len());
        for decl in decls {
            let tensor = match decl.init {
                Init::Ones => Matrix::filled(decl.rows, decl.cols, 1.0),
                Init::Zeros => Matrix::zeros(decl.rows, decl.cols),
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, std).expect("positive std");
                    let data = (0..decl.rows * decl.cols).map(|_| dist.sample(&mut rng)).collect();
                    Matrix::from_vec(decl.rows, decl.cols, data)
                }
            };
            names.push(decl.name);
            tensors.push(tensor);
        }
        Ok(Self::assemble(config.clone(), layout, names, tensors, ids))
    }

    /// Rebuild from stored tensors, checking every name and shape.
    pub fn from_named_tensors(
        config: &ModelConfig,
        ids: IdSpace,
        named: Vec<(String, Matrix)>,
    ) -> Result<Self, EncoderError> {
        config.validate()?;
        let (layout, decls) = build_layout(config, ids.items.len(), ids.users.len());
        if decls.len() != named.len() {
            return Err(EncoderError::ShapeMismatch(format!(
                "expected {} tensors, found {}",
                decls.len(),
                named.len()
            )));
        }
        let mut names = Vec::with_capacity(decls.len());
        let mut tensors = Vec::with_capacity(decls.len());
        for (decl, (name, tensor)) in decls.into_iter().zip(named) {
            if decl.name != name || (decl.rows, decl.cols) != tensor.shape() {
                return Err(EncoderError::ShapeMismatch(format!(
                    "tensor {name} {:?} does not match expected {} {:?}",
                    tensor.shape(),
                    decl.name,
                    (decl.rows, decl.cols)
                )));
            }
            if !tensor.is_finite() {
                return Err(EncoderError::NonFinite(name));
            }
            names.push(name);
            tensors.push(tensor);
        }
        Ok(Self::assemble(config.clone(), layout, names, tensors, ids))
    }

    fn assemble(config: ModelConfig, layout: Layout, names: Vec<String>, tensors: Vec<Matrix>, ids: IdSpace) -> Self {
        let index = |v: &[String]| v.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Parameters { item_index: index(&ids.items), user_index: index(&ids.users), config, layout, names, tensors, ids }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn ids(&self) -> &IdSpace {
        &self.ids
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix] {
        &mut self.tensors
    }

    pub fn tensor(&self, id: ParamId) -> &Matrix {
        &self.tensors[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Matrix> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    pub fn item_row(&self, item_id: &str) -> Option<usize> {
        self.item_index.get(item_id).copied()
    }

    pub fn user_row(&self, user_id: &str) -> Option<usize> {
        self.user_index.get(user_id).copied()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }
}
