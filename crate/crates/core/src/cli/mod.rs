//! Config-driven experiment runner behind the `milo` binary.

mod commands;
mod config;
mod experiment;
mod report;

pub use commands::{
    cmd_diagnose, cmd_generate, cmd_run, coverage, find_summaries, median, out_dir, Manifest, MethodSummary, RunSummary,
};
pub use config::{BehaviorSpec, EnvSpec, ExperimentConfig, ExpertSpec, Method};
pub use experiment::{build_env_tabular, prepare, Data, MethodOutcome, Normalization, Prepared};
pub use report::{cmd_report, score_table, tier_table, Table};

use crate::error::Error;

/// Process exit code for an error: 2 for configuration problems, 3 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        _ => 3,
    }
}
