use std::process::ExitCode;

use clap::Parser;
use gwalk_cli::{exit_code, run, RunConfig};

fn main() -> ExitCode {
    let cfg = match RunConfig::try_parse() {
        Ok(cfg) => cfg,
        Err(e) => {
            let _ = e.print();
            // Keep 2 for unscalable graphs; clap would use it for usage errors.
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cfg.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
