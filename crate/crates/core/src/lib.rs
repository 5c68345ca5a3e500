//! Offline imitation learning with pessimistic learned models on small MDPs.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod datasets;
pub mod diagnostics;
pub mod discriminators;
pub mod error;
pub mod linalg;
pub mod mdp;
pub mod models;
pub mod policy_opt;
pub mod solver;

pub use error::{Error, Result};
