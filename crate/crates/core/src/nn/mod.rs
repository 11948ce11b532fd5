//! Convolutional network engine: layers, architectures, and gradients.

pub mod arch;
pub mod batchnorm;
pub mod checkpoint;
pub mod conv;
pub mod network;
pub mod ops;

pub use arch::{ArchitectureSpec, BaselineParams, BlockKind, LayerSpec, Variant};
pub use batchnorm::{batchnorm, BatchNormState, BatchStats};
pub use conv::{conv2d_backward, conv2d_forward, ConvParams};
pub use network::{build_architecture, Evaluation, ForwardPass, NetState, Network};
pub use ops::{
    accuracy, cce_loss, dense_forward, dropout, pool_backward, pool_forward, softmax, Activation,
    Mode, PoolMode,
};
