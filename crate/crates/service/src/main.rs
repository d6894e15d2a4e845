use std::process::ExitCode;

use clap::Parser;
use nl2plan_service::cli::{main_with, Cli};

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn,nl2plan=info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match main_with(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
