//! Semantic FAQ retrieval: a multi-task sentence encoder trained on
//! paraphrase pairs plus graph-derived intent labels, and a
//! random-projection forest for nearest-question lookup.
//!
//! Module map:
//! - [`numerics`]: tensors and reverse-mode differentiation
//! - [`data`]: TSV loaders, tokenization, vocabularies, the paraphrase graph
//! - [`encoder`]: the sentence encoder
//! - [`multitask`]: matching head, intent head and the combined objective
//! - [`training`]: optimizers, training loop, metrics, checkpoints
//! - [`ann`]: approximate nearest-neighbour index
//! - [`retrieval`]: offline index build and online query answering

pub mod ann;
pub mod data;
pub mod encoder;
pub mod format;
pub mod model;
pub mod multitask;
pub mod numerics;
pub mod registry;
pub mod retrieval;
pub mod training;

pub use numerics::{Tensor, Tape, Var};
