//! Odd-k-out (OKO) set-based classification training at desk scale.
//!
//! The crate has three layers:
//!
//! * numeric foundations — stable softmax/entropy primitives, seeded
//!   randomness, dataset construction and class partitioning
//!   ([`numcore`], [`datasets`], [`sampling`]);
//! * training — the OKO losses plus the usual single-example baselines,
//!   a small MLP with hand-coded backpropagation and an SGD/cosine
//!   trainer, and the calibration metrics used to evaluate runs
//!   ([`losses`], [`model`], [`calibration`]);
//! * verification — exact-enumeration and optimization checks that
//!   confirm the theoretical properties of the set loss numerically
//!   ([`theoryverify`]).
//!
//! All numeric code is generic over the [`Scalar`] floating-point type.
//! The aliases below fix the default `f64` instantiation used by the
//! CLI and the verification suite.

pub mod calibration;
pub mod datasets;
pub mod losses;
pub mod model;
pub mod numcore;
pub mod sampling;
pub mod theoryverify;

mod scalar;
pub use scalar::Scalar;

/// Logit vector over `f64`, the default scalar.
pub type LogitVec = numcore::LogitVec<f64>;
/// Probability vector over `f64`.
pub type ProbVec = numcore::ProbVec<f64>;
/// Labeled dataset with `f64` features.
pub type LabeledDataset = datasets::LabeledDataset<f64>;
/// Loss specification with `f64` parameters.
pub type LossSpec = losses::LossSpec<f64>;
/// Multilayer perceptron with `f64` parameters.
pub type Mlp = model::Mlp<f64>;
/// Trainer configuration with `f64` hyperparameters.
pub type TrainConfig = model::TrainConfig<f64>;
/// Calibration report over `f64` metrics.
pub type CalibrationReport = calibration::CalibrationReport<f64>;
