//! Augmented-view prompt distillation at desk scale.
//!
//! A frozen teacher scores stochastic augmentations of each unlabelled image,
//! a consensus gate drops views whose top-1 class disagrees with the majority,
//! and a small student is distilled from the surviving teacher logits.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used by the harness and CLI.

pub mod augment;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod distill;
pub mod error;
pub mod gate;
pub mod harness;
pub mod imageops;
pub mod rng;
pub mod scoring;
pub mod selftest;
pub mod teacher;

mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Teacher = teacher::TeacherModel<f64>;
pub type Student = distill::StudentModel<f64>;
pub type Teacher32 = teacher::TeacherModel<f32>;
pub type Student32 = distill::StudentModel<f32>;
pub type Logits = scoring::LogitVector<f64>;
pub type Gate = gate::GateResult<f64>;
