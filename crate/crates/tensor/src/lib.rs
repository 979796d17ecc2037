//! Small define-by-run tensor engine: dense row-major tensors, a recording
//! [`Graph`] with reverse-mode gradients, named parameter stores, Adam with
//! linear warmup/decay, finite-difference gradient checks and a flat binary
//! checkpoint format.

pub mod checkpoint;
mod error;
pub mod gradcheck;
pub mod opcheck;
mod graph;
mod ops;
pub mod optim;
mod params;
mod real;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{BnUpdate, Gradients, Graph, NodeId};
pub use ops::attention::attention_probs;
pub use ops::conv::{conv2d_reference, Conv2dSpec};
pub use ops::elementwise::{gelu, softmax_rows};
pub use ops::loss::PROB_CLAMP;
pub use ops::shape::Broadcast;
pub use params::{Param, ParamId, ParamKind, ParamStore};
pub use real::{gemm, FloatOps, Real};
pub use tensor::Tensor;
