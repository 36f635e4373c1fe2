//! Minimal CPU network toolkit: NCHW tensors, a handful of layers with
//! hand-written backward passes, Adam, and a checkpoint container.

mod checkpoint;
mod layers;
mod optim;
mod real;
mod sequential;
mod tensor;

pub use checkpoint::{Checkpoint, MAGIC as CHECKPOINT_MAGIC};
pub use layers::{Conv2d, ConvTranspose2d, Layer, Linear, Param, Window};
pub use optim::Adam;
pub use real::{gemm, Real};
pub use sequential::{Activations, Sequential};
pub use tensor::Tensor;
