//! `--config file.json` support. The file's keys become flags inserted right
//! after the subcommand, so flags given on the command line (which come later)
//! win. A run manifest is accepted too: its `args` object is used and its
//! `command` fills in a missing subcommand.

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{Context, Result};
use serde_json::{Map, Value};

use crate::args::Command;
use crate::error::{dependency, invalid};

fn config_path(argv: &[OsString]) -> Result<Option<PathBuf>> {
    let mut iter = argv.iter().skip(1);
    while let Some(arg) = iter.next() {
        let Some(s) = arg.to_str() else { continue };
        if s == "--" {
            break;
        }
        if s == "--config" {
            let value = iter.next().ok_or_else(|| invalid("--config needs a file path"))?;
            return Ok(Some(PathBuf::from(value)));
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Ok(Some(PathBuf::from(v)));
        }
    }
    Ok(None)
}

fn subcommand_index(argv: &[OsString]) -> Option<usize> {
    let mut skip_value = false;
    for (i, arg) in argv.iter().enumerate().skip(1) {
        if skip_value {
            skip_value = false;
            continue;
        }
        let s = arg.to_str()?;
        if s == "--config" || s == "--threads" {
            skip_value = true;
        } else if Command::NAMES.contains(&s) {
            return Some(i);
        } else if !s.starts_with('-') {
            return None;
        }
    }
    None
}

fn scalar(value: &Value) -> Option<String> {
    match value {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Converts one JSON object into `--flag value` pairs.
pub fn object_to_flags(obj: &Map<String, Value>) -> Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (key, value) in obj {
        if key == "config" {
            continue;
        }
        let flag = format!("--{}", key.replace('_', "-"));
        match value {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => out.push(flag.into()),
            Value::Array(items) => {
                let parts = items
                    .iter()
                    .map(|v| scalar(v).ok_or_else(|| invalid(format!("config key '{key}' holds a nested value"))))
                    .collect::<Result<Vec<_>>>()?;
                out.push(flag.into());
                out.push(parts.join(",").into());
            }
            Value::Object(_) => return Err(invalid(format!("config key '{key}' holds an object"))),
            other => {
                out.push(flag.into());
                out.push(scalar(other).unwrap_or_default().into());
            }
        }
    }
    Ok(out)
}

pub fn merge_config(mut argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&argv)? else {
        return Ok(argv);
    };
    if !path.is_file() {
        return Err(dependency(format!("config file '{}' not found", path.display())));
    }
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading '{}'", path.display()))?;
    let root: Value = serde_json::from_str(&text).map_err(|e| invalid(format!("config '{}': {e}", path.display())))?;
    let Value::Object(mut obj) = root else {
        return Err(invalid(format!("config '{}' is not a JSON object", path.display())));
    };

    let manifest_command = match (obj.get("command"), obj.get("args")) {
        (Some(Value::String(c)), Some(Value::Object(_))) => Some(c.clone()),
        _ => None,
    };
    if manifest_command.is_some() {
        let Some(Value::Object(args)) = obj.remove("args") else { unreachable!() };
        obj = args;
    }

    let index = match (subcommand_index(&argv), manifest_command) {
        (Some(i), Some(cmd)) if argv[i].to_str() != Some(cmd.as_str()) => {
            return Err(invalid(format!(
                "manifest '{}' records `{cmd}`, not `{}`",
                path.display(),
                argv[i].to_string_lossy()
            )));
        }
        (Some(i), _) => i,
        (None, Some(cmd)) if Command::NAMES.contains(&cmd.as_str()) => {
            argv.push(cmd.into());
            argv.len() - 1
        }
        _ => return Err(invalid("no subcommand given")),
    };
    let flags = object_to_flags(&obj)?;
    argv.splice(index + 1..index + 1, flags);
    Ok(argv)
}
