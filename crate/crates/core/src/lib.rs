//! Calibration of long-form LLM outputs with distribution-valued
//! correctness and confidence.
//!
//! Answer correctness and model confidence are both represented as
//! probability masses over a discrete grid of score levels ([`dist`]).
//! Correctness comes from repeated rubric-based evaluation or deterministic
//! entity-list metrics ([`correctness`]); confidence from self-evaluation,
//! self-consistency, and several baselines ([`elicitation`]). Calibration is
//! scored with ECE-M, expected-score correlation, and Selective F1
//! ([`metrics`]), and put to work in a budget-constrained two-model cascade
//! ([`cascade`]). The [`pipeline`] module orchestrates end-to-end runs over
//! OpenAI-compatible or mock [`backends`].

pub mod api;
pub mod backends;
pub mod cascade;
pub mod correctness;
pub mod dist;
pub mod elicitation;
pub mod error;
pub mod metrics;
pub mod pipeline;

pub use dist::{LevelGrid, SampleScores, ScoreDistribution};
pub use error::{Error, Result};
