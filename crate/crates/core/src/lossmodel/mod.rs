//! The learnable discriminative loss.

pub mod gradcheck;
mod loss;
mod params;
mod rbf;
mod samples;

pub use loss::{build_fields, gradient, h_norm_sq, loss, residual, Fields, LossProblem};
pub use params::{LossParams, MaskInit, DEFAULT_LAMBDA};
pub use rbf::{basis, OutputTransform, RadialFunction};
pub use samples::{Center, SampleSet, TrainingSample};
