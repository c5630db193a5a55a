//! Agreement-disagreement guided knowledge transfer (ADGKT) for cross-scene
//! spectral classification.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor_net`]: dense `f64` matrices, MLP layers with manual backprop, Adam.
//! - [`agreement`]: GradVac gradient surgery, magnitude similarity, LogitNorm.
//! - [`disagreement`]: distance correlation restriction and symmetric-KL
//!   ensemble distillation.
//! - [`model`]: the bundle of extractors, encoders and heads.
//! - [`data`]: synthetic scene pairs, few-shot sampling, CSV I/O.
//! - [`metrics`]: confusion matrix with OA / AA / kappa.
//! - [`harness`]: three-phase training loop, ablation ladder, logs, checkpoints.

pub mod agreement;
pub mod data;
pub mod disagreement;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor_net;

pub use error::{Error, Result};
