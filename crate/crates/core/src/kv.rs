//! Flat `key = value` text files.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! # comment
//! key = value          # value runs to end of line, surrounding blanks trimmed
//! primitive.0.shape = ellipsoid
//! ```
//!
//! Keys are `[A-Za-z0-9_.-]+`. Blank lines and lines starting with `#` are
//! ignored. Duplicate keys are an error. Entry order is preserved on write.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KvError {
    #[error("line {line}: expected `key = value`, found {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: invalid key {key:?}")]
    BadKey { line: usize, key: String },
    #[error("duplicate key {0:?}")]
    Duplicate(String),
    #[error("missing key {0:?}")]
    Missing(String),
    #[error("key {key:?}: cannot parse {value:?} as {expected}")]
    Parse { key: String, value: String, expected: &'static str },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvMap {
    entries: Vec<(String, String)>,
}

fn valid_key(k: &str) -> bool {
    !k.is_empty() && k.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
}

impl KvMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut map = KvMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(KvError::Syntax { line: n + 1, text: raw.to_string() });
            };
            let key = k.trim();
            if !valid_key(key) {
                return Err(KvError::BadKey { line: n + 1, key: key.to_string() });
            }
            let value = match v.find(" #") {
                Some(pos) => &v[..pos],
                None => v,
            };
            if map.get(key).is_some() {
                return Err(KvError::Duplicate(key.to_string()));
            }
            map.entries.push((key.to_string(), value.trim().to_string()));
        }
        Ok(map)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, KvError> {
        self.get(key).ok_or_else(|| KvError::Missing(key.to_string()))
    }

    pub fn parse_value<T: FromStr>(&self, key: &str, expected: &'static str) -> Result<Option<T>, KvError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| KvError::Parse {
                key: key.to_string(),
                value: v.to_string(),
                expected,
            }),
        }
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T, expected: &'static str) -> Result<T, KvError> {
        Ok(self.parse_value(key, expected)?.unwrap_or(default))
    }

    /// Whitespace-separated list of values.
    pub fn parse_list<T: FromStr>(&self, key: &str, expected: &'static str) -> Result<Option<Vec<T>>, KvError> {
        let Some(v) = self.get(key) else { return Ok(None) };
        v.split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|_| KvError::Parse { key: key.to_string(), value: v.to_string(), expected })
            })
            .collect::<Result<Vec<T>, _>>()
            .map(Some)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Distinct indices `N` appearing as `prefix.N.*`, sorted.
    pub fn group_indices(&self, prefix: &str) -> Vec<usize> {
        let head = format!("{prefix}.");
        let mut idx: Vec<usize> = self
            .keys()
            .filter_map(|k| k.strip_prefix(&head))
            .filter_map(|rest| rest.split('.').next())
            .filter_map(|n| n.parse().ok())
            .collect();
        idx.sort_unstable();
        idx.dedup();
        idx
    }

    /// Overlays `other` on top of `self` (other wins).
    pub fn merged(&self, other: &KvMap) -> KvMap {
        let mut out = self.clone();
        for (k, v) in other.iter() {
            out.set(k, v);
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn to_sorted(&self) -> BTreeMap<String, String> {
        self.entries.iter().cloned().collect()
    }
}
