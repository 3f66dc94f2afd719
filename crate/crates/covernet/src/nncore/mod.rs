//! Minimal dense/convolutional kernel set with reverse-mode gradients and an
//! Adam optimizer — exactly the operations the encoder needs, nothing more.
//!
//! Activations are stored as `f32`; statistical reductions (batch moments,
//! global means, norms, dot products) accumulate in `f64`. Every kernel
//! accumulates each output element in a fixed sequential order, so outputs
//! are independent of the parallel work split.

mod adam;
mod checkpoint;
mod conv;
mod dense;
mod norm;
mod pool;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, AdamCheckpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use conv::{conv2d, conv2d_backward, ConvGrads, KERNEL_SIZE};
pub use dense::{
    dense, dense_backward, dropout, dropout_backward, l2_normalize,
    l2_normalize_backward_from_input, relu, relu_backward, L2_NORM_FLOOR,
};
pub use norm::{batchnorm_backward, batchnorm_eval, batchnorm_train, BatchNormState, BnCache, BN_EPS, BN_MOMENTUM};
pub use pool::{global_mean, meanpool, meanpool_backward, POOL_F, POOL_T};
pub use tensor::Tensor;

pub(crate) use conv::{conv2d_batch_backward, conv2d_batch_forward};
pub(crate) use dense::{
    dropout_backward_inplace, l2_norm, l2_normalize_backward, l2_normalize_slice, relu_backward_inplace,
    relu_inplace,
};
pub(crate) use pool::{global_mean_backward, meanpool_batch_backward, meanpool_batch_forward, pooled_dims};

/// Whether stochastic layers (dropout) and batch statistics are live.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
