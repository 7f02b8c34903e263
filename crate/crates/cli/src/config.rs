//! Flag defaults from a TOML file.
//!
//! Each subcommand reads the table of the same name, e.g.
//!
//! ```toml
//! [train]
//! iterations = 3000
//! n_gaussians = 20000
//!
//! [serve]
//! port = 9000
//! ```
//!
//! Values are turned into flags inserted before the user's own arguments, so
//! anything given on the command line wins.

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{bail, Context};

const SUBCOMMANDS: [&str; 5] = ["phantom", "train", "eval", "render", "serve"];

fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(rest) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(rest));
        }
    }
    None
}

fn value_to_string(key: &str, v: &toml::Value) -> anyhow::Result<Option<String>> {
    Ok(Some(match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Boolean(_) => return Ok(None),
        toml::Value::Array(items) => items
            .iter()
            .map(|i| value_to_string(key, i).map(|s| s.unwrap_or_default()))
            .collect::<anyhow::Result<Vec<_>>>()?
            .join(","),
        other => bail!("config key '{key}' has unsupported type {}", other.type_str()),
    }))
}

/// Flags equivalent to one config table, in key order.
pub fn table_to_args(table: &toml::Table) -> anyhow::Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (key, value) in table {
        let flag = format!("--{}", key.replace('_', "-"));
        match value {
            toml::Value::Boolean(true) => out.push(flag.into()),
            toml::Value::Boolean(false) => {}
            v => {
                out.push(flag.into());
                out.push(value_to_string(key, v)?.unwrap_or_default().into());
            }
        }
    }
    Ok(out)
}

pub fn merge_config_file(argv: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
    let doc: toml::Table = text.parse().with_context(|| format!("parsing config {}", path.display()))?;
    let Some(pos) = argv.iter().position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref())) else {
        return Ok(argv);
    };
    let name = argv[pos].to_string_lossy().into_owned();
    let extra = match doc.get(&name) {
        Some(toml::Value::Table(t)) => table_to_args(t)?,
        Some(_) => bail!("config section '{name}' must be a table"),
        None => return Ok(argv),
    };
    let mut merged = argv[..=pos].to_vec();
    merged.extend(extra);
    merged.extend_from_slice(&argv[pos + 1..]);
    Ok(merged)
}
