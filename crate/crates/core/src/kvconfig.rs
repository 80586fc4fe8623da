//! Flat `key = value` configuration text with dotted namespaces.
//!
//! ```text
//! # comment
//! data.num_classes = 10
//! train.loss.alpha = 0.01
//! ```
//!
//! Keys are lowercase `[a-z0-9_.-]`, values are trimmed and internal runs of
//! whitespace collapse to a single space, so the canonical form (and the
//! fingerprint derived from it) ignores formatting.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Result, SkiError};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && key
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || matches!(c, '_' | '.' | '-'))
        && !key.starts_with('.')
        && !key.ends_with('.')
}

fn normalize_value(v: &str) -> String {
    v.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl KvConfig {
    pub fn new() -> Self {
        KvConfig::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = KvConfig::new();
        for (n, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| SkiError::config(format!("line {}", n + 1), "expected `key = value`"))?;
            let key = k.trim().to_ascii_lowercase();
            if !valid_key(&key) {
                return Err(SkiError::config(key, format!("invalid key on line {}", n + 1)));
            }
            if cfg.entries.contains_key(&key) {
                return Err(SkiError::config(key, "duplicate key"));
            }
            cfg.entries.insert(key, normalize_value(v));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SkiError::io(format!("reading config {}", path.display()), e))?;
        KvConfig::parse(&text)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.insert(key.into(), normalize_value(&value.to_string()));
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| SkiError::config(key, format!("cannot parse `{v}`: {e}"))),
        }
    }

    pub fn get_or<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn get_list<T>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some(v) = self.entries.get(key) else { return Ok(None) };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<T>()
                    .map_err(|e| SkiError::config(key, format!("cannot parse `{s}`: {e}")))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries under `prefix.`, with the prefix stripped.
    pub fn section(&self, prefix: &str) -> KvConfig {
        let p = format!("{prefix}.");
        KvConfig {
            entries: self
                .entries
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    /// Copies `other` under `prefix.`.
    pub fn merge_prefixed(&mut self, prefix: &str, other: &KvConfig) {
        for (k, v) in &other.entries {
            self.entries.insert(format!("{prefix}.{k}"), v.clone());
        }
    }

    /// Overwrites entries with those of `other`.
    pub fn overlay(&mut self, other: &KvConfig) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    /// Errors on any key not in `allowed` (after stripping nothing).
    pub fn reject_unknown(&self, allowed: &[&str], namespace: &str) -> Result<()> {
        for k in self.entries.keys() {
            if !allowed.contains(&k.as_str()) {
                let field = if namespace.is_empty() { k.clone() } else { format!("{namespace}.{k}") };
                return Err(SkiError::config(field, "unknown key"));
            }
        }
        Ok(())
    }

    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    /// Hex SHA-256 of the canonical text, truncated to 16 characters.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        hex::encode(digest)[..16].to_string()
    }
}
