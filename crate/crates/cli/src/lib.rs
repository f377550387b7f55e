//! The `gwalk` command line: argument types, the subcommand drivers and the
//! mapping from errors to process exit codes.

pub mod commands;
pub mod config;

pub use commands::run;
pub use config::{Command, RunConfig};

/// Exit status for a failed run.
///
/// 2 when the graph cannot be scaled or nothing testable survives pruning,
/// 3 for unreadable or malformed input and failed writes, 4 when labels do
/// not match the graph, 1 for anything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use gwalk_core::Error;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::NotScalable { .. } | Error::Degenerate(_) => 2,
                Error::Parse { .. } | Error::Io(_) | Error::Json(_) => 3,
                Error::LabelMismatch { .. } => 4,
                _ => 1,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<csv::Error>() || cause.is::<serde_json::Error>() {
            return 3;
        }
    }
    1
}

/// Version string with the commit the binary was built from.
pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (build ", env!("GWALK_BUILD_HASH"), ")");
