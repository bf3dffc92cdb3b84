//! Multi-task group-relative policy optimization on a desk-scale
//! quality-assessment environment.
//!
//! A small autoregressive token policy answers three kinds of queries
//! (score a sample, name its degradation and severity, compare two samples)
//! in a `<think>…</think><answer>{…}</answer>` grammar. Answers are graded by
//! binary verifiable rewards, advantages are normalized within each group of
//! sampled responses, and the policy is updated with the clipped surrogate
//! and a KL penalty toward a frozen reference.

// `!(x >= 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codec;
pub mod dataset;
pub mod env;
mod error;
pub mod eval;
pub mod grading;
pub mod grpo;
pub mod labels;
pub mod metrics;
pub mod optim;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
pub use labels::{ComparisonChoice, DegradationClass, GroundTruth, SeverityLevel, TaskKind};
