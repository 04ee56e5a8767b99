//! `key = value` configuration files.
//!
//! Each entry becomes a `--key value` flag placed right after the subcommand,
//! ahead of the user's flags, so anything given on the command line wins.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

const SUBCOMMANDS: [&str; 5] = ["train", "eval", "predict", "synth", "export"];

pub fn parse(text: &str, source: &Path) -> Result<Vec<(String, String)>> {
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{}:{}: expected key = value", source.display(), lineno + 1);
        };
        let key = key.trim().trim_start_matches("--");
        if key.is_empty() {
            bail!("{}:{}: empty key", source.display(), lineno + 1);
        }
        if key == "config" {
            bail!("{}:{}: config files cannot include other config files", source.display(), lineno + 1);
        }
        entries.push((key.to_owned(), unquote(value.trim()).to_owned()));
    }
    Ok(entries)
}

fn unquote(value: &str) -> &str {
    value
        .strip_prefix('"')
        .and_then(|v| v.strip_suffix('"'))
        .unwrap_or(value)
}

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        if arg == "--config" {
            return it.next().cloned();
        }
        if let Some(path) = arg.to_str().and_then(|a| a.strip_prefix("--config=")) {
            return Some(path.into());
        }
    }
    None
}

/// Rewrites `args` with the entries of the `--config` file, if one is given.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let Some(at) = args.iter().position(|a| a.to_str().is_some_and(|a| SUBCOMMANDS.contains(&a))) else {
        return Ok(args);
    };
    let path = Path::new(&path);
    let text = fs::read_to_string(path).with_context(|| format!("reading config file {}", path.display()))?;
    let mut out: Vec<OsString> = args[..=at].to_vec();
    for (key, value) in parse(&text, path)? {
        out.push(format!("--{key}").into());
        out.push(value.into());
    }
    out.extend_from_slice(&args[at + 1..]);
    Ok(out)
}
