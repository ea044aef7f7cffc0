//! Experiment runner behind the `mkid` binary.

pub mod config;
pub mod criteria;
pub mod gradcheck;
pub mod matrix;
pub mod patterns;
pub mod run;

use mkid::Error;

/// Failures of the command-line layer on top of library errors.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Lib(#[from] Error),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_CHECK_FAILED: u8 = 4;

/// Process status for a failed command: 2 for bad input, 3 for numerical
/// breakdown.
pub fn exit_code(e: &CliError) -> u8 {
    match e {
        CliError::Lib(
            Error::NonFinite(_)
            | Error::NonFiniteGradient { .. }
            | Error::Diverged { .. }
            | Error::Conditioning(_)
            | Error::Calibration(_)
            | Error::UndefinedNormalization,
        ) => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}
