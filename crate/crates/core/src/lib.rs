//! Conformal localization of the decisive error step in a sequence.
//!
//! Given per-step scores for a failed run, the localizers here return a set of
//! steps that contains the earliest unrecoverable step with probability at
//! least `1 − α` over exchangeable calibration data. The contiguous methods
//! (LF, RF, TWF, CRSVP) return intervals, which map directly onto a rollback
//! point.

pub mod cli;
pub mod conformal;
pub mod datagen;
pub mod domain;
pub mod error;
pub mod eval;
pub mod hiercp;
pub mod par;
pub mod rng;
pub mod scoring;

pub use conformal::{calibrate, CalibratedModel, ConformalConfig, Method, Prediction};
pub use domain::{Interval, PredictionSet, Trajectory, XScore};
pub use error::{Error, Result};
pub use eval::{split_eval, EvalReport, RecoveryModel, RollbackReport};
pub use scoring::AggregatorConfig;
