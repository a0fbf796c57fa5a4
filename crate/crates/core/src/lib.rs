//! CNN training engine: NCHW `f64` tensors, layers with hand-written backward
//! passes, Adam with a plateau schedule, augmentation, the architecture
//! notation, data ingest, gradient checking and checkpointed training.
// `!(x > 0.0)` style checks are deliberate: they reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod archdsl;
pub mod augment;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod image;
pub mod init;
pub mod layers;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Dims, Tensor4};
