//! Minimal tensor engine with hand-written adjoints for the layers the
//! scoring network uses. Each op returns what its backward needs; the model
//! replays those caches in reverse order.

pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod dropout;
pub mod loss;
pub mod optim;
pub mod pool;
pub mod tensor;

pub use batchnorm::{batchnorm, batchnorm_backward, batchnorm_running, BatchNormCache, BatchNormState, BnMode};
pub use conv::{conv1d, conv1d_backward, conv1d_filter_grad, Padding, WindowGeometry};
pub use dense::{dense, dense_backward, relu, relu_backward};
pub use dropout::{dropout, dropout_backward};
pub use loss::{softmax, softmax_xent, softmax_xent_batch};
pub use optim::{adam_step, OptimizerConfig, Param, ParamKind, ParamSet};
pub use pool::{maxpool1d, maxpool1d_backward, PoolOutput};
pub use tensor::{Real, Tensor};
