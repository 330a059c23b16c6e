//! `fet`: train, predict, generate, eval, sample, sweep.
//!
//! Exit codes: 0 success, 2 usage or configuration, 3 data, 4 provider or
//! transport.

mod commands;
mod settings;

use std::process::ExitCode;

use clap::Parser;
use fet_core::Error;

use settings::{Cli, Settings};

/// An error on its way to the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, kind: "usage", message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { code: 3, kind: "data", message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::Config(_) => (2, "config"),
            Error::Provider(_) | Error::Interrupted { .. } => (4, "provider"),
            Error::LabelPath { .. }
            | Error::UnknownLabel(_)
            | Error::DuplicateLabel(_)
            | Error::Data { .. }
            | Error::InsufficientExamples { .. }
            | Error::Checkpoint(_)
            | Error::Io { .. }
            | Error::Json(_)
            | Error::Contract(_) => (3, "data"),
        };
        Self { code, kind, message: e.to_string() }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = Settings::resolve(cli.config.as_deref(), &cli.overrides)
        .and_then(|settings| commands::run(cli.command, &settings));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let blob = serde_json::json!({ "error": f.kind, "message": f.message, "exit_code": f.code });
            eprintln!("{blob}");
            ExitCode::from(f.code)
        }
    }
}
