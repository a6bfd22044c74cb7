//! Command-line pipelines over the `modgap` engine.
//!
//! Every subcommand writes one artifact and echoes its resolved
//! configuration into it, either as a `config` key or, for JSONL and store
//! outputs, a `config.json` sidecar. Inputs are echoed by content hash so
//! identical inputs and flags give byte-identical artifacts.

pub mod args;
pub mod commands;
pub mod config;
pub mod synth;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

pub use args::Cli;
pub use synth::{gen_synth, SynthConfig, SynthData};

pub const EXIT_DATA: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] modgap::Error),
    #[error("{0}")]
    Usage(String),
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("{context}: {source}")]
    Output {
        context: String,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.code(),
            CliError::Usage(_) => "Usage",
            CliError::BadConfig(_) => "BadConfig",
            CliError::Output { .. } => "Output",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::BadConfig(_) => EXIT_USAGE,
            CliError::Core(_) | CliError::Output { .. } => EXIT_DATA,
        }
    }

    pub(crate) fn output(
        context: impl Into<String>,
        source: impl std::error::Error + Send + Sync + 'static,
    ) -> Self {
        CliError::Output {
            context: context.into(),
            source: Box::new(source),
        }
    }
}

fn report(code: &str, message: &str) {
    let line = serde_json::json!({ "level": "error", "code": code, "message": message });
    eprintln!("{line}");
}

/// Parses `argv`, filling unset flags from `--config`. `Err` carries the
/// exit code after the diagnostic has been printed.
pub fn parse(argv: Vec<OsString>) -> Result<Cli, ExitCode> {
    let strict = |argv: Vec<OsString>| -> Result<Cli, ExitCode> {
        Cli::command()
            .try_get_matches_from(argv)
            .and_then(|m| Cli::from_arg_matches(&m))
            .map_err(|e| {
                use clap::error::ErrorKind;
                if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                    let _ = e.print();
                    return ExitCode::SUCCESS;
                }
                let rendered = e.render().to_string();
                let message: Vec<&str> = rendered
                    .lines()
                    .take_while(|l| !l.trim().is_empty())
                    .map(str::trim)
                    .collect();
                report("Usage", message.join(" ").trim_start_matches("error: "));
                ExitCode::from(EXIT_USAGE)
            })
    };
    let lenient = Cli::command()
        .ignore_errors(true)
        .try_get_matches_from(argv.clone());
    let Some(path) = lenient
        .as_ref()
        .ok()
        .and_then(|m| m.get_one::<std::path::PathBuf>("config").cloned())
    else {
        return strict(argv);
    };
    let matches = lenient.expect("checked above");
    let extra = config::load(&path).and_then(|t| config::injected_args(&t, &matches));
    match extra {
        Ok(extra) => strict(argv.into_iter().chain(extra).collect()),
        Err(e) => {
            report(e.code(), &e.to_string());
            Err(ExitCode::from(e.exit_code()))
        }
    }
}

pub fn main_with(argv: Vec<OsString>) -> ExitCode {
    let cli = match parse(argv) {
        Ok(cli) => cli,
        Err(code) => return code,
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            report("Usage", "--threads must be at least 1");
            return ExitCode::from(EXIT_USAGE);
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(e.code(), &e.to_string());
            ExitCode::from(e.exit_code())
        }
    }
}
