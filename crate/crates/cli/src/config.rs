//! TOML config files. Top-level scalars act as global flags, tables hold the
//! flags of one subcommand (`[retrieve]`, `[analyze.gap]`, ...). Keys are
//! flag names with either `-` or `_`. A key is applied only when the flag is
//! absent from the command line.

use std::ffi::OsString;
use std::path::Path;

use clap::parser::ValueSource;
use clap::ArgMatches;

use crate::CliError;

pub fn load(path: &Path) -> Result<toml::Table, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::BadConfig(format!("{}: {e}", path.display())))?;
    text.parse::<toml::Table>()
        .map_err(|e| CliError::BadConfig(format!("{}: {e}", path.display())))
}

fn on_command_line(matches: &ArgMatches, key: &str) -> bool {
    matches
        .try_get_raw(key)
        .ok()
        .flatten()
        .is_some()
        && matches.value_source(key) == Some(ValueSource::CommandLine)
}

fn scalar(value: &toml::Value) -> Result<Option<String>, CliError> {
    Ok(match value {
        toml::Value::String(s) => Some(s.clone()),
        toml::Value::Integer(i) => Some(i.to_string()),
        toml::Value::Float(f) => Some(f.to_string()),
        toml::Value::Boolean(_) => None,
        other => {
            return Err(CliError::BadConfig(format!(
                "unsupported value {other}"
            )))
        }
    })
}

fn push_key(
    out: &mut Vec<OsString>,
    matches: &ArgMatches,
    key: &str,
    value: &toml::Value,
) -> Result<(), CliError> {
    let id = key.replace('-', "_");
    if on_command_line(matches, &id) {
        return Ok(());
    }
    let flag = format!("--{}", key.replace('_', "-"));
    match value {
        toml::Value::Boolean(true) => out.push(flag.into()),
        toml::Value::Boolean(false) => {}
        toml::Value::Array(items) => {
            for item in items {
                let v = scalar(item)?
                    .ok_or_else(|| CliError::BadConfig(format!("'{key}' holds a boolean list")))?;
                out.push(flag.clone().into());
                out.push(v.into());
            }
        }
        other => {
            out.push(flag.into());
            out.push(scalar(other)?.expect("non-boolean scalar").into());
        }
    }
    Ok(())
}

/// Extra arguments to append to `argv` so the config fills every flag the
/// user left out.
pub fn injected_args(table: &toml::Table, matches: &ArgMatches) -> Result<Vec<OsString>, CliError> {
    let mut out = Vec::new();
    for (key, value) in table {
        if key == "config" {
            return Err(CliError::BadConfig("config files cannot nest".into()));
        }
        if !value.is_table() {
            push_key(&mut out, matches, key, value)?;
        }
    }
    let mut section = Some(table);
    let mut sub = matches.subcommand();
    while let Some((name, sub_matches)) = sub {
        section = section.and_then(|t| t.get(name)).and_then(|v| v.as_table());
        if let Some(t) = section {
            for (key, value) in t {
                if !value.is_table() {
                    push_key(&mut out, sub_matches, key, value)?;
                }
            }
        }
        sub = sub_matches.subcommand();
    }
    Ok(out)
}
