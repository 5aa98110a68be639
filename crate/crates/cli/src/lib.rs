//! File formats, the surface registry and the `carnot` subcommands.

// `!(a < b)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algebra_file;
pub mod args;
pub mod commands;
pub mod expr;
pub mod registry;

use thiserror::Error;

/// Failures that are not a failed check; all map to exit code 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] carnot_core::Error),
}

/// What a command reports back to `main`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

impl Outcome {
    pub fn from_bool(pass: bool) -> Self {
        if pass {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Pass => 0,
            Outcome::Fail => 1,
        }
    }
}

pub fn run(cli: args::Cli) -> Result<Outcome, CliError> {
    use args::Command::*;
    match cli.command {
        Validate(a) => commands::validate(&a),
        CheckMinimality(a) => commands::check_minimality(&a),
        FirstVariation(a) => commands::first_variation(&a),
        Mesh(a) => commands::mesh(&a),
        MetricFactor(a) => commands::metric_factor(&a),
    }
}
