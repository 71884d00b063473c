//! Plain-text run configuration: `[section]` headers with `key = value`
//! lines, `#` comments. Command-line overrides win over file values; every
//! run writes back its resolved snapshot in the same format.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Elem;

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    /// section -> key -> value; the unnamed section is "".
    values: BTreeMap<String, BTreeMap<String, String>>,
}

impl RunConfig {
    pub fn new() -> Self {
        RunConfig::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "config line {}: expected key=value, got '{raw}'",
                    lineno + 1
                )));
            };
            cfg.set_in(&section, k.trim(), v.trim());
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    fn set_in(&mut self, section: &str, key: &str, value: &str) {
        self.values
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.to_string());
    }

    /// Sets a dotted `section.key` (or bare `key` in the unnamed section).
    pub fn set(&mut self, dotted: &str, value: &str) {
        match dotted.split_once('.') {
            Some((s, k)) => self.set_in(s, k, value),
            None => self.set_in("", dotted, value),
        }
    }

    /// Applies a `key=value` override string as passed on the command line.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let Some((k, v)) = assignment.split_once('=') else {
            return Err(Error::Config(format!("--set expects key=value, got '{assignment}'")));
        };
        self.set(k.trim(), v.trim());
        Ok(())
    }

    /// Merges `other` on top of `self` (other wins).
    pub fn merge_from(&mut self, other: &RunConfig) {
        for (s, kv) in &other.values {
            for (k, v) in kv {
                self.set_in(s, k, v);
            }
        }
    }

    pub fn get(&self, dotted: &str) -> Option<&str> {
        let (s, k) = dotted.split_once('.').unwrap_or(("", dotted));
        self.values.get(s).and_then(|kv| kv.get(k)).map(|v| v.as_str())
    }

    pub fn get_or<'a>(&'a self, dotted: &str, default: &'a str) -> &'a str {
        self.get(dotted).unwrap_or(default)
    }

    pub fn get_u64(&self, dotted: &str, default: u64) -> Result<u64> {
        match self.get(dotted) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("{dotted}: expected integer, got '{v}'"))),
        }
    }

    pub fn get_usize(&self, dotted: &str, default: usize) -> Result<usize> {
        Ok(self.get_u64(dotted, default as u64)? as usize)
    }

    pub fn get_elem(&self, dotted: &str, default: Elem) -> Result<Elem> {
        match self.get(dotted) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("{dotted}: expected number, got '{v}'"))),
        }
    }

    pub fn get_bool(&self, dotted: &str, default: bool) -> Result<bool> {
        match self.get(dotted) {
            None => Ok(default),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some("false") | Some("0") | Some("no") => Ok(false),
            Some(v) => Err(Error::Config(format!("{dotted}: expected bool, got '{v}'"))),
        }
    }

    /// Serialized resolved snapshot, stable key order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        if let Some(rootless) = self.values.get("") {
            for (k, v) in rootless {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        for (s, kv) in &self.values {
            if s.is_empty() {
                continue;
            }
            let _ = writeln!(out, "[{s}]");
            for (k, v) in kv {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        super::atomic_write(path, self.render().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_sections_and_overrides() {
        let text = "\
# comment
seed = 7
[train]
epochs = 10
lr = 0.001
";
        let mut cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.get_u64("seed", 0).unwrap(), 7);
        assert_eq!(cfg.get_u64("train.epochs", 0).unwrap(), 10);
        assert_eq!(cfg.get_elem("train.lr", 0.0).unwrap(), 0.001);
        cfg.apply_override("train.epochs=20").unwrap();
        assert_eq!(cfg.get_u64("train.epochs", 0).unwrap(), 20);
        assert!(cfg.apply_override("no-equals-sign").is_err());
    }

    #[test]
    fn render_parses_back() {
        let mut cfg = RunConfig::new();
        cfg.set("seed", "3");
        cfg.set("model.width", "64");
        cfg.set("train.lr", "0.001");
        let text = cfg.render();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back.get("model.width"), Some("64"));
        assert_eq!(back.get("seed"), Some("3"));
    }

    #[test]
    fn malformed_line_rejected() {
        assert!(RunConfig::parse("just a line\n").is_err());
    }
}
