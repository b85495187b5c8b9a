//! Core primitives for cell-grounded table reasoning.
//!
//! The crate covers the pieces a step-level table verifier needs: a table
//! data model with a canonical text serialization and a cell-to-span index
//! ([`table`]), plan parsing and cell-mask compilation ([`plan`]), a
//! deterministic executor for the closed tool vocabulary ([`engine`]),
//! attention aggregation and the mask-overlap reward with logistic
//! calibration ([`verifier`]), content-reward baselines ([`rewards`]), and
//! the statistics used by the evaluation harness ([`stats`]).

pub mod engine;
pub mod plan;
pub mod rewards;
pub mod stats;
pub mod table;
pub mod verifier;
