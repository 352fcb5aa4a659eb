//! Detection–correction spelling model: a Bi-GRU detector emits a
//! per-character error probability that soft-masks input embeddings
//! before a transformer-encoder corrector, trained end-to-end with a
//! λ-weighted joint loss on synthetically corrupted text.
//!
//! See the crate examples for runnable entry points into each
//! capability (autodiff, data synthesis, training, ablations,
//! prediction); the `softmask` binary wires the same functions into
//! subcommands.

pub mod cli;
pub mod datagen;
pub mod eval;
pub mod layers;
pub mod model;
pub mod numerics;
pub mod train;
pub mod vocab;

pub use model::{MaskingMode, ModelConfig, ModelOutput, SoftMaskModel};
pub use vocab::Vocabulary;
