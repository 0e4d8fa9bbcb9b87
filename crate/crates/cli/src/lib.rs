//! The `matinfo` command-line tool.

pub mod commands;
pub mod error;
pub mod io;
pub mod verify;

pub use commands::{run, Cli};
pub use error::{exit, CliError, CliResult};

/// Formats a scalar with 12 digits after the point, printing values that
/// round to zero as an unsigned zero.
pub fn format_scalar(x: f64) -> String {
    if x.abs() < 5e-13 {
        return format!("{:.12}", 0.0);
    }
    format!("{x:.12}")
}

/// Worker threads from `MATINFO_THREADS`, defaulting to 1.
pub fn thread_count() -> CliResult<usize> {
    match std::env::var("MATINFO_THREADS") {
        Err(_) => Ok(1),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Usage(format!(
                "MATINFO_THREADS must be a positive integer, got {s:?}"
            ))),
        },
    }
}
