//! From-scratch dense network substrate: tensors, parameter sets, the MLP
//! with its exact backward pass, cross-entropy, AdamW, warmup schedule and
//! gradient clipping.

pub mod loss;
pub mod model;
pub mod optim;
pub mod params;
pub mod schedule;
pub mod tensor;

pub use loss::{cross_entropy, cross_entropy_loss, log_softmax, softmax};
pub use model::{activate, Activation, Architecture, ForwardTrace, LayerSpec, MlpModel, Mode, Norm};
pub use optim::{clip_global_norm, AdamWConfig, AdamWState};
pub use params::{param_name, parse_param_name, ParamSet, Role};
pub use schedule::LrSchedule;
pub use tensor::Tensor2;
