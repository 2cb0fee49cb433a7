//! Batch front-end for the SQG laboratory: configuration, file formats and
//! the subcommands behind the `sqglab` binary.

pub mod commands;
pub mod config;
pub mod io;

use sqg_core::SqgError;

pub use commands::Verdict;
pub use config::{ConfigError, RunConfig};

pub const EXIT_OK: u8 = 0;
pub const EXIT_SCIENTIFIC: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

/// Exit code for an error that stopped a command.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return EXIT_VALIDATION;
    }
    match err.downcast_ref::<SqgError>() {
        Some(
            SqgError::Data(_)
            | SqgError::Symmetry { .. }
            | SqgError::Domain(_)
            | SqgError::Config(_)
            | SqgError::Resolution(_),
        ) => EXIT_VALIDATION,
        Some(SqgError::Fit(_) | SqgError::Selection(_)) => EXIT_SCIENTIFIC,
        Some(_) => EXIT_NUMERICAL,
        // unreadable or malformed input files
        None if err.chain().any(|e| e.is::<std::io::Error>()) => EXIT_VALIDATION,
        None => EXIT_NUMERICAL,
    }
}
