//! Desk-scale trainable hybrid models: a gated diagonal recurrence standing
//! in for a selective SSM, sparse attention branches driven by [`crate::patterns`],
//! the key-scorer ranking loss, reverse-mode differentiation, and AdamW.

pub mod model;
pub mod tape;
pub mod train;

pub use model::{
    reference_weights, ForwardOut, HybridModelConfig, LayerScore, Model, PatternKind, PatternMode,
};
pub use tape::{ranking_loss_value, Tape, Var};
pub use train::{
    candidate_targets, evaluate, load_checkpoint, save_checkpoint, train, AdamW, MetricRow,
    TrainConfig, TrainOutcome,
};
