//! Differentiable primitives, the fusion U-Net, its losses and optimizer.

mod adam;
mod checkpoint;
mod conv;
mod graph;
mod loss;
mod scalar;
mod tensor;
mod unet;

pub use adam::Adam;
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use graph::{Gradients, Graph, NodeId};
pub use loss::{loss_fuse, loss_r3d, total_loss, LossConfig};
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use unet::{
    grid_to_tensor, init_params, unet_forward, unet_graph, InBetween, LayerKind, LayerSpec,
    Parameters, SkipMode, UNetConfig, LEAKY_SLOPE,
};
