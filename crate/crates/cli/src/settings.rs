//! Command-line parsing merged with an optional JSON settings file.
//!
//! The user's arguments are parsed strictly first, so repeated flags are
//! rejected. If `--config` names a file, its entries become flag tokens placed
//! before the user's arguments and the line is parsed again with later
//! occurrences overriding earlier ones.

use std::ffi::OsString;

use clap::{CommandFactory, FromArgMatches, Parser};
use serde_json::Value;

use crate::{Cli, Command, EXIT_DATA, EXIT_USAGE};

pub(crate) enum ParseFailure {
    Clap(clap::Error),
    Other(i32, String),
}

fn config_path(c: &Command) -> Option<&std::path::Path> {
    let common = match c {
        Command::Datagen(a) => &a.common,
        Command::Train(a) => &a.common,
        Command::Predict(a) => &a.common,
        Command::Boxes(a) => &a.common,
        Command::Eval(a) => &a.common,
        Command::Convert(a) => &a.common,
        Command::Validate(a) => &a.common,
    };
    common.config.as_deref()
}

/// Flag tokens for the settings that apply to subcommand `sub`. Keys that
/// belong to another subcommand are skipped; unknown keys are an error.
fn settings_tokens(doc: &Value, sub: &str) -> Result<Vec<OsString>, String> {
    let Value::Object(map) = doc else {
        return Err("settings file must hold a JSON object".into());
    };
    let root = Cli::command();
    let own = root.find_subcommand(sub).ok_or_else(|| format!("unknown subcommand {sub}"))?;
    let mut tokens = Vec::new();
    for (key, value) in map {
        if key == "config" {
            return Err("settings file cannot name another settings file".into());
        }
        let arg = own.get_arguments().find(|a| a.get_long() == Some(key.as_str()));
        let Some(arg) = arg else {
            let known = root.get_subcommands().any(|s| s.get_arguments().any(|a| a.get_long() == Some(key.as_str())));
            if known {
                continue;
            }
            return Err(format!("unknown setting {key:?}"));
        };
        let flag = format!("--{key}");
        let takes_value = arg.get_num_args().is_some_and(|n| n.takes_values());
        match value {
            Value::Null => {}
            Value::Bool(b) if !takes_value => {
                if *b {
                    tokens.push(flag.into());
                }
            }
            Value::Bool(b) => tokens.extend([flag.into(), b.to_string().into()]),
            Value::Number(n) => tokens.extend([flag.into(), n.to_string().into()]),
            Value::String(s) => tokens.extend([flag.into(), s.into()]),
            Value::Array(_) | Value::Object(_) => return Err(format!("setting {key:?} must be a scalar")),
        }
    }
    Ok(tokens)
}

pub(crate) fn parse(argv: &[OsString]) -> Result<Cli, ParseFailure> {
    let strict = Cli::try_parse_from(argv).map_err(ParseFailure::Clap)?;
    let Some(path) = config_path(&strict.command) else {
        return Ok(strict);
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| ParseFailure::Other(EXIT_DATA, format!("{}: {e}", path.display())))?;
    let doc: Value =
        serde_json::from_str(&text).map_err(|e| ParseFailure::Other(EXIT_DATA, format!("{}: {e}", path.display())))?;
    // argv[1] is the subcommand: the root command has no options of its own
    let sub = argv[1].to_string_lossy().into_owned();
    let tokens =
        settings_tokens(&doc, &sub).map_err(|m| ParseFailure::Other(EXIT_USAGE, format!("{}: {m}", path.display())))?;
    let merged: Vec<OsString> = argv[..2].iter().cloned().chain(tokens).chain(argv[2..].iter().cloned()).collect();
    let cmd = Cli::command().mut_subcommands(|s| s.args_override_self(true));
    let matches = cmd.try_get_matches_from(merged).map_err(ParseFailure::Clap)?;
    Cli::from_arg_matches(&matches).map_err(ParseFailure::Clap)
}
