//! Flat `key = value` config files. Keys are tracked as they are read;
//! anything left unread by the consumer is a hard error, so typos never pass
//! silently.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
    read: RefCell<BTreeSet<String>>,
}

impl ConfigMap {
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", lineno + 1)))?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("duplicate key '{key}'")));
            }
        }
        Ok(ConfigMap { entries, read: RefCell::new(BTreeSet::new()) })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text)
    }

    /// Apply `key=value` command-line overrides on top of the file contents.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for ov in overrides {
            let (key, value) = ov
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{ov}' must be key=value")))?;
            self.entries.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(())
    }

    pub fn get_raw(&self, key: &str) -> Option<&str> {
        let v = self.entries.get(key).map(|s| s.as_str());
        if v.is_some() {
            self.read.borrow_mut().insert(key.to_string());
        }
        v
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get_raw(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Config(format!("key '{key}': cannot parse '{raw}'"))),
        }
    }

    pub fn get_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| Error::Config(format!("missing required key '{key}'")))
    }

    /// Comma-separated list value.
    pub fn get_list(&self, key: &str) -> Option<Vec<String>> {
        self.get_raw(key)
            .map(|raw| raw.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
    }

    /// Error if any key was never read by the consumer.
    pub fn finish(&self) -> Result<()> {
        let read = self.read.borrow();
        let unknown: Vec<&String> = self.entries.keys().filter(|k| !read.contains(*k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            let list = unknown.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ");
            Err(Error::Config(format!("unknown config keys: {list}")))
        }
    }

    /// Canonical text form, used for hashing and snapshots.
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

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_values_comments_and_blanks() {
        let cfg = ConfigMap::parse_str("a = 1\n# comment\n\nb = hello # trailing\n").unwrap();
        assert_eq!(cfg.get_or::<u32>("a", 0).unwrap(), 1);
        assert_eq!(cfg.get_raw("b"), Some("hello"));
        cfg.finish().unwrap();
    }

    #[test]
    fn unread_key_is_error() {
        let cfg = ConfigMap::parse_str("known = 1\ntpyo = 2\n").unwrap();
        let _ = cfg.get_or::<u32>("known", 0).unwrap();
        let err = cfg.finish().unwrap_err();
        assert!(err.to_string().contains("tpyo"));
    }

    #[test]
    fn duplicate_and_malformed_lines_rejected() {
        assert!(ConfigMap::parse_str("a = 1\na = 2\n").is_err());
        assert!(ConfigMap::parse_str("just words\n").is_err());
    }

    #[test]
    fn overrides_replace_values() {
        let mut cfg = ConfigMap::parse_str("a = 1\n").unwrap();
        cfg.apply_overrides(&["a=5".to_string()]).unwrap();
        assert_eq!(cfg.get_or::<u32>("a", 0).unwrap(), 5);
        cfg.finish().unwrap();
    }

    #[test]
    fn canonical_is_sorted_and_stable() {
        let cfg = ConfigMap::parse_str("b = 2\na = 1\n").unwrap();
        assert_eq!(cfg.canonical(), "a = 1\nb = 2\n");
    }
}
