//! Line-oriented configuration files.
//!
//! The on-disk format is deliberately small: `[section]` headers group
//! `key = value` lines, `#` starts a comment, blank lines are ignored.
//! Values are kept as strings and converted on access so that one file can
//! mix floats, integers, flags, and lists (whitespace-separated).
//!
//! A canonical serialization (sections and keys sorted) feeds a SHA-256
//! content hash that pipeline stages stamp into their artifacts, which makes
//! "was this trained under the same configuration?" a string comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Malformed { line: usize, text: String },
    #[error("line {line}: key {key:?} appears before any [section] header")]
    KeyOutsideSection { line: usize, key: String },
    #[error("line {line}: duplicate key {key:?} in section [{section}]")]
    DuplicateKey {
        line: usize,
        section: String,
        key: String,
    },
    #[error("missing key {key:?} in section [{section}]")]
    MissingKey { section: String, key: String },
    #[error("section [{section}] key {key:?}: cannot parse {value:?} as {ty}")]
    BadValue {
        section: String,
        key: String,
        value: String,
        ty: &'static str,
    },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Parsed configuration: ordered map of sections to key/value pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Config {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl Config {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim().to_string();
                sections.entry(name.clone()).or_default();
                current = Some(name);
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Malformed {
                    line: line_no,
                    text: raw.trim().to_string(),
                });
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            let Some(section) = current.clone() else {
                return Err(ConfigError::KeyOutsideSection { line: line_no, key });
            };
            let entry = sections.entry(section.clone()).or_default();
            if entry.contains_key(&key) {
                return Err(ConfigError::DuplicateKey {
                    line: line_no,
                    section,
                    key,
                });
            }
            entry.insert(key, value);
        }
        Ok(Self { sections })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl ToString) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.to_string());
    }

    pub fn sections(&self) -> impl Iterator<Item = &str> {
        self.sections.keys().map(|s| s.as_str())
    }

    pub fn has(&self, section: &str, key: &str) -> bool {
        self.sections
            .get(section)
            .is_some_and(|s| s.contains_key(key))
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    pub fn get_str_or<'a>(&'a self, section: &str, key: &str, default: &'a str) -> &'a str {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(|s| s.as_str())
            .unwrap_or(default)
    }

    pub fn get_str(&self, section: &str, key: &str) -> Result<&str, ConfigError> {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(|s| s.as_str())
            .ok_or_else(|| ConfigError::MissingKey {
                section: section.to_string(),
                key: key.to_string(),
            })
    }

    fn parse_as<T: std::str::FromStr>(
        &self,
        section: &str,
        key: &str,
        ty: &'static str,
    ) -> Result<T, ConfigError> {
        let raw = self.get_str(section, key)?;
        raw.parse().map_err(|_| ConfigError::BadValue {
            section: section.to_string(),
            key: key.to_string(),
            value: raw.to_string(),
            ty,
        })
    }

    pub fn get_f64(&self, section: &str, key: &str) -> Result<f64, ConfigError> {
        self.parse_as(section, key, "f64")
    }

    pub fn get_u64(&self, section: &str, key: &str) -> Result<u64, ConfigError> {
        self.parse_as(section, key, "u64")
    }

    pub fn get_usize(&self, section: &str, key: &str) -> Result<usize, ConfigError> {
        self.parse_as(section, key, "usize")
    }

    pub fn get_bool(&self, section: &str, key: &str) -> Result<bool, ConfigError> {
        let raw = self.get_str(section, key)?;
        match raw {
            "true" | "1" | "yes" | "on" => Ok(true),
            "false" | "0" | "no" | "off" => Ok(false),
            _ => Err(ConfigError::BadValue {
                section: section.to_string(),
                key: key.to_string(),
                value: raw.to_string(),
                ty: "bool",
            }),
        }
    }

    /// Whitespace-separated list of floats.
    pub fn get_f64_list(&self, section: &str, key: &str) -> Result<Vec<f64>, ConfigError> {
        let raw = self.get_str(section, key)?;
        raw.split_whitespace()
            .map(|tok| {
                tok.parse().map_err(|_| ConfigError::BadValue {
                    section: section.to_string(),
                    key: key.to_string(),
                    value: raw.to_string(),
                    ty: "list of f64",
                })
            })
            .collect()
    }

    /// Whitespace-separated list of unsigned integers.
    pub fn get_u64_list(&self, section: &str, key: &str) -> Result<Vec<u64>, ConfigError> {
        let raw = self.get_str(section, key)?;
        raw.split_whitespace()
            .map(|tok| {
                tok.parse().map_err(|_| ConfigError::BadValue {
                    section: section.to_string(),
                    key: key.to_string(),
                    value: raw.to_string(),
                    ty: "list of u64",
                })
            })
            .collect()
    }

    /// Like `get_f64` but falls back to a default when the key is absent.
    pub fn get_f64_or(&self, section: &str, key: &str, default: f64) -> Result<f64, ConfigError> {
        if self.has(section, key) {
            self.get_f64(section, key)
        } else {
            Ok(default)
        }
    }

    pub fn get_usize_or(
        &self,
        section: &str,
        key: &str,
        default: usize,
    ) -> Result<usize, ConfigError> {
        if self.has(section, key) {
            self.get_usize(section, key)
        } else {
            Ok(default)
        }
    }

    pub fn get_u64_or(&self, section: &str, key: &str, default: u64) -> Result<u64, ConfigError> {
        if self.has(section, key) {
            self.get_u64(section, key)
        } else {
            Ok(default)
        }
    }

    pub fn get_bool_or(
        &self,
        section: &str,
        key: &str,
        default: bool,
    ) -> Result<bool, ConfigError> {
        if self.has(section, key) {
            self.get_bool(section, key)
        } else {
            Ok(default)
        }
    }

    /// Canonical text form: sections and keys in sorted order.
    pub fn canonical_string(&self) -> String {
        let mut out = String::new();
        for (section, entries) in &self.sections {
            let _ = writeln!(out, "[{section}]");
            for (key, value) in entries {
                let _ = writeln!(out, "{key} = {value}");
            }
        }
        out
    }

    /// Short hex digest of the canonical form, stamped into artifacts.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_string().as_bytes());
        let mut out = String::with_capacity(16);
        for byte in digest.iter().take(8) {
            let _ = write!(out, "{byte:02x}");
        }
        out
    }

    pub fn write_file(&self, path: &Path) -> Result<(), ConfigError> {
        std::fs::write(path, self.canonical_string()).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_keys_comments() {
        let cfg = Config::parse(
            "# top comment\n[grid]\nheight = 152\nwidth = 280 # trailing\n\n[oracle]\nsites = 8\n",
        )
        .unwrap();
        assert_eq!(cfg.get_usize("grid", "height").unwrap(), 152);
        assert_eq!(cfg.get_usize("grid", "width").unwrap(), 280);
        assert_eq!(cfg.get_usize("oracle", "sites").unwrap(), 8);
    }

    #[test]
    fn rejects_duplicate_and_orphan_keys() {
        let err = Config::parse("[a]\nx = 1\nx = 2\n").unwrap_err();
        assert!(matches!(err, ConfigError::DuplicateKey { .. }), "{err}");
        let err = Config::parse("x = 1\n").unwrap_err();
        assert!(matches!(err, ConfigError::KeyOutsideSection { .. }), "{err}");
    }

    #[test]
    fn missing_and_bad_values_name_section_and_key() {
        let cfg = Config::parse("[a]\nx = not-a-number\n").unwrap();
        let err = cfg.get_f64("a", "x").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[a]") && msg.contains("\"x\""), "{msg}");
        let err = cfg.get_f64("a", "y").unwrap_err();
        assert!(err.to_string().contains("\"y\""), "{err}");
    }

    #[test]
    fn lists_parse() {
        let cfg = Config::parse("[s]\nseeds = 5 11 17\nw = 0.1 0.2\n").unwrap();
        assert_eq!(cfg.get_u64_list("s", "seeds").unwrap(), vec![5, 11, 17]);
        assert_eq!(cfg.get_f64_list("s", "w").unwrap(), vec![0.1, 0.2]);
    }

    #[test]
    fn hash_is_stable_and_order_independent() {
        let a = Config::parse("[b]\ny = 2\n[a]\nx = 1\n").unwrap();
        let b = Config::parse("[a]\nx = 1\n[b]\ny = 2\n").unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash().len(), 16);
        let c = Config::parse("[a]\nx = 3\n[b]\ny = 2\n").unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn roundtrip_through_canonical_form() {
        let a = Config::parse("[geom]\nedge = 40\n[grid]\nheight = 152\n").unwrap();
        let b = Config::parse(&a.canonical_string()).unwrap();
        assert_eq!(a, b);
    }
}
