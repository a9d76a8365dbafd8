//! Discriminative target-model prediction for visual tracking.
//!
//! The numeric core ([`numerics`], [`lossmodel`], [`modelpred`]) is generic
//! over the scalar type; the aliases below fix it to `f64`, which is what
//! the tracking loop, meta-training and the CLI use.

pub mod bench;
pub mod config;
pub mod error;
pub mod image;
pub mod io;
pub mod lossmodel;
pub mod metatrain;
pub mod modelpred;
pub mod numerics;
pub mod scalar;
pub mod tracking;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Real = f64;
pub type FeatureMap = numerics::Tensor3<Real>;
pub type Scores = numerics::ScoreMap<Real>;
pub type Filter = modelpred::Filter<Real>;
pub type LossParams = lossmodel::LossParams<Real>;
pub type SampleSet = lossmodel::SampleSet<Real>;
pub type TrainingSample = lossmodel::TrainingSample<Real>;
