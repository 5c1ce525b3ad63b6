//! Analytical performance models for convolutional networks: operation and
//! traffic counts, roofline and waterline bounds, efficiency-gap analysis,
//! a tensor-machine simulator for fused blocks and latency projection.

pub mod complexity;
pub mod error;
pub mod gap;
pub mod model;
pub mod num;
pub mod perf;
pub mod projection;
pub mod tensor_machine;
pub mod zoo;

pub use error::{Error, Result};
pub use model::{
    expand_network, validate_network, Activation, BlockKind, BlockSpec, ConvSpec, DeviceSpec,
    ExecutionScheme, KernelWorkload, NetworkSpec, TensorDims,
};
pub use num::Real;
pub use zoo::ZooId;

pub type Verdict = perf::KernelVerdict<f64>;
pub type Waterline = perf::SequenceVerdict<f64>;
pub type GapPoint = gap::GapPoint<f64>;
pub type Tensor32 = tensor_machine::Tensor<f32>;
pub type Matrix32 = tensor_machine::Matrix<f32>;
