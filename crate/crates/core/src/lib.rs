//! Diversity-aware group-relative policy optimization at desk scale.
//!
//! The crate trains toy autoregressive policies on a synthetic arithmetic
//! task with a clipped group-relative surrogate, a k3 KL penalty and an
//! entropy-style diversity term applied only to correct samples. It also
//! ships the tooling to check the underlying math exactly: a small
//! reverse-mode autodiff engine, exact sequence enumeration for tabular
//! policies, and the diversity/accuracy metrics used to compare runs.
//!
//! Module map:
//!
//! - [`autodiff`]: tape-based reverse-mode differentiation over `f64` arrays.
//! - [`policy`]: tabular and MLP policies, sampling, scoring, enumeration.
//! - [`tasks`]: the micro-math environment and its rule-based rewards.
//! - [`rollout`]: group sampling and group-normalized advantages.
//! - [`objective`]: surrogate, KL, diversity terms and their combination.
//! - [`metrics`]: Pass@k, Potential@k, equation/n-gram/Self-BLEU diversity.
//! - [`harness`]: configuration, training, evaluation, verification, study.

pub mod autodiff;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod objective;
pub mod policy;
pub mod rollout;
pub mod tasks;

pub use error::{Error, Result};
