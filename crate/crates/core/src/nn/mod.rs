//! Differentiable building blocks over NCHW `f64` tensors with hand-written
//! backward passes.

pub mod conv;
pub mod layers;
pub mod norm;
pub mod param;

pub use conv::Conv2d;
pub use layers::{Layer, MaxPool2d, Relu, Residual};
pub use norm::{BatchNorm2d, BnMode};
pub use param::{Param, ParamGroup, ParameterTag};
