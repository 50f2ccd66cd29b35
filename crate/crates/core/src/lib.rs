//! Extract, transplant, freeze and retrain the depthwise filters of
//! depthwise-separable CNNs, and run the transfer experiments built on that.

pub mod archive;
pub mod archzoo;
pub mod backend;
pub mod convref;
pub mod datahub;
pub mod error;
pub mod protocols;
pub mod reportkit;
pub mod scalar;
pub mod surgery;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::{Dtype, Scalar};

pub type ModelF32 = archzoo::Model<f32>;
pub type ModelF64 = archzoo::Model<f64>;
pub type FilterBankF32 = surgery::FilterBank<f32>;
pub type FilterBankF64 = surgery::FilterBank<f64>;
pub type TensorF32 = tensor::Tensor<f32>;
pub type TensorF64 = tensor::Tensor<f64>;
