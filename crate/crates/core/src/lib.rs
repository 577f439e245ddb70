//! Adversarial path sampling for instruction-following navigation agents.
//!
//! A recurrent sampler proposes navigation paths that maximise a navigator's
//! student-forcing loss; a frozen speaker back-translates them into
//! instructions; the navigator trains on the result. The same sampler also
//! drives per-environment pre-exploration of unseen worlds.

pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod navigator;
pub mod nn;
pub mod preexplore;
pub mod seeding;
pub mod sampler;
pub mod speaker;
pub mod trainer;
pub mod world;

pub use error::{Error, Result};
