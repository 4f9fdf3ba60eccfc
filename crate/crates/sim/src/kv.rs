//! Flat `key = value` documents with `[section]` headers and `#` comments.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
#[error("{}, line {line}: {message}", path.display())]
pub struct KvError {
    pub path: PathBuf,
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Section {
    /// Empty for keys before the first header.
    pub name: String,
    pub line: usize,
    pub entries: Vec<Entry>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub path: PathBuf,
    pub sections: Vec<Section>,
}

impl Document {
    pub fn parse(path: &Path, text: &str) -> Result<Self, KvError> {
        let err = |line, message: String| KvError { path: path.to_owned(), line, message };
        let mut sections = vec![Section { name: String::new(), line: 0, entries: Vec::new() }];
        let mut seen_sections = BTreeSet::new();
        let mut seen_keys = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if let Some(rest) = body.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(line, format!("unterminated section header `{body}`")))?
                    .trim()
                    .to_string();
                if name.is_empty() {
                    return Err(err(line, "empty section name".into()));
                }
                if !seen_sections.insert(name.clone()) {
                    return Err(err(line, format!("section [{name}] appears twice")));
                }
                sections.push(Section { name, line, entries: Vec::new() });
                continue;
            }
            let (key, value) =
                body.split_once('=').ok_or_else(|| err(line, format!("expected `key = value`, found `{body}`")))?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(err(line, "missing key".into()));
            }
            let section = sections.last_mut().expect("root section");
            if !seen_keys.insert((section.name.clone(), key.clone())) {
                return Err(err(line, format!("key `{key}` given twice")));
            }
            section.entries.push(Entry { key, value: value.trim().to_string(), line });
        }
        Ok(Self { path: path.to_owned(), sections })
    }

    pub fn error(&self, line: usize, message: impl Into<String>) -> KvError {
        KvError { path: self.path.clone(), line, message: message.into() }
    }
}

/// Byte counts with optional binary suffixes: `64`, `48KB`, `1.25MB`, `2GiB`.
pub fn parse_size(text: &str) -> Result<u64, String> {
    let t = text.trim();
    let split = t.find(|c: char| c.is_ascii_alphabetic()).unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let scale: u64 = match unit.trim().to_ascii_uppercase().as_str() {
        "" | "B" => 1,
        "K" | "KB" | "KIB" => 1 << 10,
        "M" | "MB" | "MIB" => 1 << 20,
        "G" | "GB" | "GIB" => 1 << 30,
        other => return Err(format!("unknown size unit `{other}`")),
    };
    let num = num.trim();
    if let Ok(n) = num.parse::<u64>() {
        return n.checked_mul(scale).ok_or_else(|| format!("size `{t}` overflows"));
    }
    let value: f64 = num.parse().map_err(|_| format!("bad size `{t}`"))?;
    let bytes = value * scale as f64;
    if !(bytes.is_finite() && bytes >= 0.0) || bytes.fract() != 0.0 || bytes > u64::MAX as f64 {
        return Err(format!("size `{t}` is not a whole number of bytes"));
    }
    Ok(bytes as u64)
}

pub fn format_size(bytes: u64) -> String {
    for (unit, scale) in [("GB", 1u64 << 30), ("MB", 1 << 20), ("KB", 1 << 10)] {
        if bytes >= scale && bytes.is_multiple_of(scale) {
            return format!("{}{unit}", bytes / scale);
        }
    }
    format!("{bytes}B")
}

pub fn parse_number<T: std::str::FromStr>(text: &str, what: &str) -> Result<T, String> {
    text.trim().parse().map_err(|_| format!("bad {what} `{}`", text.trim()))
}

/// Comma-separated core indices; empty means none.
pub fn parse_core_list(text: &str) -> Result<Vec<usize>, String> {
    let t = text.trim();
    if t.is_empty() || t == "none" {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for part in t.split(',') {
        let c: usize = parse_number(part, "core index")?;
        if out.contains(&c) {
            return Err(format!("core {c} listed twice"));
        }
        out.push(c);
    }
    Ok(out)
}
