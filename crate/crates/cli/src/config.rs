//! Merges a TOML run file into the command line.
//!
//! The file mirrors the flag names: top-level `seed` and `out`, then one table
//! per subcommand (`[simulate]`, `[train]`, `[whatif.add-link]`, ...) whose keys
//! are long flag names without the dashes. File values are spliced into the
//! argument list ahead of the user's own flags, and since every flag overrides
//! itself, the command line wins.

use std::ffi::OsString;
use std::path::Path;

use clap::CommandFactory;
use toml::{Table, Value};

use crate::args::Cli;
use crate::error::CliError;

const GLOBALS: [&str; 2] = ["seed", "out"];
const GLOBAL_FLAGS_WITH_VALUE: [&str; 3] = ["--seed", "--out", "--config"];

fn config_path(argv: &[OsString]) -> Option<OsString> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

/// Positions just past the subcommand names, e.g. `[2]` for `simulate` or
/// `[2, 3]` for `whatif add-link`.
fn subcommand_path(argv: &[OsString]) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    let mut cmd = Cli::command();
    let mut i = 1;
    while i < argv.len() {
        let s = argv[i].to_string_lossy().into_owned();
        if GLOBAL_FLAGS_WITH_VALUE.contains(&s.as_str()) {
            i += 2;
            continue;
        }
        if s.starts_with('-') {
            i += 1;
            continue;
        }
        match cmd.find_subcommand(&s) {
            Some(sub) => {
                out.push((i + 1, s));
                let has_children = sub.get_subcommands().next().is_some();
                cmd = sub.clone();
                if !has_children {
                    break;
                }
            }
            None => break,
        }
        i += 1;
    }
    out
}

fn long_flags(cmd: &clap::Command) -> Vec<String> {
    cmd.get_arguments()
        .filter(|a| !a.is_global_set())
        .filter_map(|a| a.get_long().map(str::to_string))
        .filter(|l| !["help", "version"].contains(&l.as_str()))
        .collect()
}

fn tokens(key: &str, value: &Value) -> Result<Vec<OsString>, CliError> {
    let flag = format!("--{key}");
    let scalar = |v: &Value| -> Result<String, CliError> {
        match v {
            Value::String(s) => Ok(s.clone()),
            Value::Integer(i) => Ok(i.to_string()),
            Value::Float(f) => Ok(f.to_string()),
            other => Err(CliError::Config(format!("config key {key}: unsupported value {other}"))),
        }
    };
    Ok(match value {
        Value::Boolean(true) => vec![flag.into()],
        Value::Boolean(false) => vec![],
        Value::Array(items) => {
            let parts = items.iter().map(scalar).collect::<Result<Vec<_>, _>>()?;
            vec![flag.into(), parts.join(",").into()]
        }
        v => vec![flag.into(), scalar(v)?.into()],
    })
}

/// Checks every key of `table` against the flags of `cmd` and its children.
fn validate(table: &Table, cmd: &clap::Command, prefix: &str) -> Result<(), CliError> {
    let flags = long_flags(cmd);
    for (key, value) in table {
        if let Some(sub) = cmd.find_subcommand(key) {
            let Value::Table(t) = value else {
                return Err(CliError::Config(format!(
                    "config section {prefix}{key} must be a table"
                )));
            };
            validate(t, sub, &format!("{prefix}{key}."))?;
        } else if prefix.is_empty() && GLOBALS.contains(&key.as_str()) {
            continue;
        } else if !flags.contains(key) {
            return Err(CliError::Config(format!("unknown config key {prefix}{key}")));
        }
    }
    Ok(())
}

fn read_table(path: &Path) -> Result<Table, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::MissingFile(format!("config {}: {e}", path.display())))?;
    text.parse::<Table>()
        .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
}

/// Returns `argv` with the run file's values spliced in.
pub fn expand(argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let table = read_table(Path::new(&path))?;
    validate(&table, &Cli::command(), "")?;

    let mut globals = Vec::new();
    for key in GLOBALS {
        if let Some(v) = table.get(key) {
            globals.extend(tokens(key, v)?);
        }
    }
    let path_positions = subcommand_path(&argv);
    let mut section = Some(&table);
    let mut inserts: Vec<(usize, Vec<OsString>)> = Vec::new();
    for (pos, name) in &path_positions {
        section = section.and_then(|t| t.get(name)).and_then(Value::as_table);
        let Some(t) = section else { break };
        let mut toks = Vec::new();
        for (k, v) in t {
            if !matches!(v, Value::Table(_)) {
                toks.extend(tokens(k, v)?);
            }
        }
        inserts.push((*pos, toks));
    }

    let n = argv.len();
    let mut out = Vec::with_capacity(n + globals.len());
    let mut rest = argv.into_iter();
    for i in 0..=n {
        if let Some((_, toks)) = inserts.iter().find(|(p, _)| *p == i) {
            out.extend(toks.iter().cloned());
        }
        if let Some(a) = rest.next() {
            out.push(a);
        }
        if i == 0 {
            out.extend(globals.iter().cloned());
        }
    }
    Ok(out)
}
