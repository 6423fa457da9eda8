//! Bi-level unlearning optimization library.
//!
//! The centerpiece is an update rule that treats unlearning hierarchically:
//! drive the forget loss to stationarity while applying only the conflict-free
//! part of the retain gradient. Around it sit the weighted-sum baselines, an
//! unlearning loss zoo over a tiny softmax language model, finite-difference
//! gradient validation, per-step diagnostics, and trace persistence for the
//! experiment harness.

pub mod diagnostics;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod objectives;
pub mod pipeline;
pub mod toylm;
pub mod trace;
pub mod updaters;
pub mod vecmath;

pub use error::{Error, Result};
pub use vecmath::ParamVector;
