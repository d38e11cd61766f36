//! Temporal continual learning (TCL) lab for multi-horizon sequence forecasting.
//!
//! The crate trains a compact feed-forward predictor on synthetic
//! articulated-motion data, splitting the prediction horizon into segments
//! that are added stage by stage. Each stage transition carries a learnable
//! prior compensation factor (PCF) `alpha` that estimates how much
//! previously acquired knowledge the new objective is erasing, and reweights
//! the stage loss accordingly.
//!
//! Layout:
//! - [`mod@array`] / [`autodiff`] — dense `f32`/`f64` arrays and a minimal
//!   reverse-mode tape with finite-difference gradient checking,
//! - [`synth`] / [`dataset`] — forward-kinematics motion generator,
//!   windowing, CSV persistence, standardization,
//! - [`objective`] / [`bounds`] — segment losses, the PCF stage loss and its
//!   regularizer, and numerical verification of the log-bound the surrogate
//!   objective rests on,
//! - [`backbone`] / [`optim`] / [`trainer`] / [`checkpoint`] — the model,
//!   optimizers, the multi-stage training loop, and resumable checkpoints,
//! - [`metrics`] / [`ablation`] / [`report`] — MPJPE evaluation, the paired
//!   ablation runner, and plain-text report rendering.
//!
//! The numeric kernels are generic over [`scalar::Scalar`] (any `num-traits`
//! float); the training pipeline and all file formats are pinned to `f64`
//! through the aliases below.

pub mod ablation;
pub mod array;
pub mod autodiff;
pub mod backbone;
pub mod bounds;
pub mod checkpoint;
pub mod dataset;
pub mod metrics;
pub mod objective;
pub mod optim;
pub mod report;
pub mod synth;
pub mod trainer;

pub mod scalar;

/// Scalar type used by the training pipeline and every file format.
pub type Real = f64;
/// Dense array over [`Real`].
pub type RealArray = array::Array<Real>;
/// Autodiff node over [`Real`].
pub type RealNode = autodiff::Node<Real>;
/// Parameter store over [`Real`].
pub type RealParamStore = autodiff::ParamStore<Real>;
