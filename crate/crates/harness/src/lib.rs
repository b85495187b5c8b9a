//! Evaluation harness for cell-grounded table reasoning: the trajectory
//! controller with its stagnation halt, scripted and HTTP backends, the
//! evaluation pipelines (attention AUROC, permutation stability, mask
//! falsification, labelability, theory checks), and the CLI that drives
//! them.

pub mod backend;
pub mod cli;
pub mod controller;
pub mod http;
pub mod pipelines;
pub mod standards;
pub mod theory;
