//! Scenario runner for the `tipwarn` library: JSON configs in, CSV artifacts out.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;

use tipwarn::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// 0 success, 2 validation, 3 numerical or I/O failure, 4 admissibility
    /// failure under strict mode.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Io(_) => 3,
            CliError::Core(e) => match e.root() {
                Error::Admissibility(_) => 4,
                Error::Config(_) | Error::Domain(_) | Error::Precondition(_) | Error::Structural(_) => 2,
                _ => 3,
            },
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Validation("x".into()).exit_code(), 2);
        assert_eq!(CliError::Io("x".into()).exit_code(), 3);
        assert_eq!(CliError::from(Error::Admissibility("x".into())).exit_code(), 4);
        let wrapped = Error::Step {
            step: 3,
            source: Box::new(Error::Admissibility("x".into())),
        };
        assert_eq!(CliError::from(wrapped).exit_code(), 4);
        assert_eq!(CliError::from(Error::NumericalFailure("x".into())).exit_code(), 3);
        assert_eq!(CliError::from(Error::Domain("x".into())).exit_code(), 2);
    }
}
