//! Network assembly, the minibatch training loop with evaluation and
//! step-size scheduling, and checkpoint persistence.

mod checkpoint;
mod network;
mod train;

pub use checkpoint::{
    encode, from_bytes, load_checkpoint, save_checkpoint, save_state, to_bytes, Checkpoint, MAGIC, VERSION,
};
pub use network::{Gradients, Network, ParamGrads};
pub use train::{
    accuracy_from_logits, evaluate, predictions, run, train, AugmentConfig, EvalRecord, TrainConfig, TrainHistory,
    TrainState,
};
