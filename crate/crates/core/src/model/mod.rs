//! Transformer encoder-decoder corrector: post-norm layers, a token table
//! shared by both inputs and the output projection, label-smoothed loss,
//! and greedy or beam inference.

pub mod forward;
pub mod infer;
pub mod pretrain;
pub mod spec;
pub mod train;

pub use forward::{forward, label_smoothed_loss, LossConfig, Mode};
pub use infer::{correct, correct_greedy_batch, Hypothesis, Strategy};
pub use spec::{CorrectorWeights, ModelSpec, Positions};
pub use train::{eval_loss, token_batches, Pair, TrainConfig, TrainReport, Trainer};
