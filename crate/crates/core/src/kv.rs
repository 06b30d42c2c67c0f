//! Line-oriented `key = value` text shared by config and spec files.
//!
//! Blank lines and lines starting with `#` are ignored; a `#` after a value
//! starts a trailing comment. Keys are case-sensitive.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

pub(crate) fn parse(text: &str, what: &'static str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(what, format!("line {}: expected key = value", i + 1)))?;
        let key = k.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::parse(
                what,
                format!("line {}: bad key {key:?}", i + 1),
            ));
        }
        out.push(Entry {
            key: key.to_string(),
            value: v.trim().to_string(),
            line: i + 1,
        });
    }
    Ok(out)
}

impl Entry {
    pub fn err(&self, what: &'static str, detail: impl std::fmt::Display) -> Error {
        Error::parse(what, format!("line {} ({}): {detail}", self.line, self.key))
    }

    pub fn num<T: std::str::FromStr>(&self, what: &'static str) -> Result<T> {
        self.value
            .parse()
            .map_err(|_| self.err(what, format!("cannot parse {:?}", self.value)))
    }

    /// Whitespace- or comma-separated list of numbers.
    pub fn list<T: std::str::FromStr>(&self, what: &'static str) -> Result<Vec<T>> {
        self.value
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| self.err(what, format!("cannot parse {s:?}")))
            })
            .collect()
    }

    pub fn triple<T: std::str::FromStr + Copy>(&self, what: &'static str) -> Result<[T; 3]> {
        let v = self.list(what)?;
        <[T; 3]>::try_from(v.as_slice()).map_err(|_| self.err(what, "expected three values"))
    }
}

/// Rejects keys seen twice unless listed in `repeatable`.
pub(crate) fn reject_duplicates(
    entries: &[Entry],
    what: &'static str,
    repeatable: &[&str],
) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for e in entries {
        if !repeatable.contains(&e.key.as_str()) && !seen.insert(e.key.as_str()) {
            return Err(e.err(what, "duplicate key"));
        }
    }
    Ok(())
}

/// Formats a float so that parsing returns the same value.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}
