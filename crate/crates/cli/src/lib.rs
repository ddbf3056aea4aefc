//! Command-line driver: manifests, binary formats, run records and the
//! `featsplat` subcommands.

pub mod commands;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod record;

pub use commands::{run, Cli, Command};
pub use error::{CliError, CliResult, EXIT_NUMERIC, EXIT_OK, EXIT_VALIDATION};

/// Caps rayon's worker count from `FEATSPLAT_THREADS` when set.
pub fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("FEATSPLAT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Validation(format!("FEATSPLAT_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Validation(format!("cannot configure thread pool: {e}")))
}
