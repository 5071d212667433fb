//! Text-matching sequential recommendation.
//!
//! Items and user histories are rendered as text, encoded by a small
//! encoder-decoder transformer into one shared vector space, and matched
//! by dot product. Long histories are split into sessions that are encoded
//! independently and fused by the decoder's cross-attention.
//!
//! - [`corpus`]: ingestion, filtering and leave-one-out splits
//! - [`verbalize`]: templates, word vocabulary, session splitting
//! - [`encoder`]: the transformer, its gradients and checkpoints
//! - [`training`]: negative sampling, batching and the Adam loop
//! - [`ranker`]: full-catalog ranking and cutoff metrics
//! - [`analysis`]: long-tail, popularity and text diagnostics
//! - [`pipeline`] and [`cli`]: the end-to-end workflow over a work directory

pub mod analysis;
pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod pipeline;
pub mod ranker;
pub mod synthetic;
pub mod tensor;
pub mod training;
pub mod verbalize;
