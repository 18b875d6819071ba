//! Numeric substrate: `f32` tensors, tape-based reverse-mode autodiff over
//! the layer kinds a filter-bank convolutional classifier needs, and Adam.
//!
//! Storage is 32-bit; reductions (losses, batch-norm moments, kernel
//! gradients) accumulate in 64-bit. Execution is single-threaded and fully
//! deterministic for a given seed.

pub mod adam;
pub mod error;
pub mod ops;
pub mod params;
pub mod rng;
pub mod session;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamState, ParamGroup};
pub use error::{Result, TensorError};
pub use ops::activation::{pointwise_activation, Activation, SAFE_LOG_FLOOR};
pub use ops::conv::{conv2d, conv2d_transposed, Padding};
pub use ops::dense::dense;
pub use ops::loss::{cross_entropy, mse, LossKind};
pub use ops::norm::{batchnorm, RunningStats, BN_EPSILON, BN_MOMENTUM};
pub use ops::pool::avgpool2d;
pub use ops::{concat, dropout, permute, slice, Mode};
pub use params::{init_params, ParamStore};
pub use rng::RngState;
pub use session::{GradPolicy, Session};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
