//! UTF-8 `key=value` text with `#` comments.

use indexmap::IndexMap;

use crate::error::{Error, Result};

/// Parse `key=value` lines. Blank lines and lines starting with `#` are
/// skipped; keys must be unique.
pub fn parse(text: &str) -> Result<IndexMap<String, String>> {
    let mut out = IndexMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {k}", n + 1)));
        }
    }
    Ok(out)
}

pub fn render<'a>(pairs: impl IntoIterator<Item = (&'a str, String)>) -> String {
    pairs
        .into_iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect()
}

/// Parse a value, naming the key in the error.
pub fn value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

pub fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected a boolean, got {v:?}"
        ))),
    }
}
