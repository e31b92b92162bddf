//! Weakly supervised object localization by multiple-instance learning with
//! a learned pairwise similarity.
//!
//! The training loop alternates two steps. Re-training fits unary and
//! pairwise scoring functions to the current pseudo labels. Re-localization
//! picks one proposal per positive bag by minimizing a pairwise graph
//! energy, initialized from TRW-S solutions of small disjoint mini-problems
//! and refined with ICM.

pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod inference;
pub mod io;
pub mod losses;
pub mod pipeline;
pub mod scoring;
pub mod synth;
pub mod transfer;

pub use error::{Error, Result};
