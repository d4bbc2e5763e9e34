//! Affinity scoring between hidden-unit behaviors and hypothesis functions.
//!
//! The engine takes a symbol dataset, a set of unit groups from some model,
//! and a set of hypothesis functions, and estimates for every (group,
//! hypothesis, measure) task how strongly the group's activations track the
//! hypothesis signal. Scoring is incremental: behaviors stream through in
//! shuffled blocks and tasks stop early once their error estimate falls under
//! a tolerance.
//!
//! The crate is generic over the scalar type used for behavior values; see
//! [`scalar::Scalar`]. `f64` is the default throughout the aliases exported
//! at the root.

pub mod block;
pub mod dataset;
pub mod dnib;
pub mod engine;
pub mod error;
pub mod extract;
pub mod grammar;
pub mod hypothesis;
pub mod inspectql;
pub mod measures;
pub mod scalar;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Behavior matrix over `f32` values.
pub type Block32 = block::BehaviorBlock<f32>;
/// Behavior matrix over `f64` values, the default working precision.
pub type Block64 = block::BehaviorBlock<f64>;
