//! Plain sectioned key-value experiment configs.
//!
//! Files look like:
//!
//! ```text
//! [dataset]
//! classes = 5
//! train = 2000
//! ```
//!
//! Values resolve in order: built-in defaults, then the config file, then
//! `--set section.key=value` overrides, then explicit command-line flags.
//! Every command echoes its fully-resolved config into the output
//! directory so a run can be reproduced from the echo alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// A parse or validation problem; maps to the validation exit code.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

fn err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// Sectioned string key-value store with deterministic ordering.
#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = KvConfig::default();
        let mut section = String::new();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(stripped) = line.strip_prefix('[') {
                let name = stripped
                    .strip_suffix(']')
                    .ok_or_else(|| err(format!("line {}: unterminated section", line_no + 1)))?;
                section = name.trim().to_string();
                if section.is_empty() {
                    return Err(err(format!("line {}: empty section name", line_no + 1)));
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("line {}: expected key = value", line_no + 1)))?;
            if section.is_empty() {
                return Err(err(format!(
                    "line {}: key outside any [section]",
                    line_no + 1
                )));
            }
            cfg.insert(&section, key.trim(), value.trim());
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| err(format!("read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies one `section.key=value` override.
    pub fn apply_set(&mut self, expr: &str) -> Result<()> {
        let (path, value) = expr
            .split_once('=')
            .ok_or_else(|| err(format!("--set '{expr}': expected section.key=value")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| err(format!("--set '{expr}': key must be section.key")))?;
        if section.is_empty() || key.is_empty() {
            return Err(err(format!("--set '{expr}': empty section or key")));
        }
        self.insert(section, key, value.trim());
        Ok(())
    }

    pub fn insert(&mut self, section: &str, key: &str, value: impl Into<String>) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.into());
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .get(section)
            .and_then(|entries| entries.get(key))
            .map(String::as_str)
    }

    /// Rejects any entry outside the allowed (section, keys) table.
    pub fn check_known(&self, allowed: &[(&str, &[&str])]) -> Result<()> {
        for (section, entries) in &self.sections {
            let keys = allowed
                .iter()
                .find(|(name, _)| name == section)
                .map(|(_, keys)| *keys)
                .ok_or_else(|| err(format!("unknown config section [{section}]")))?;
            for key in entries.keys() {
                if !keys.contains(&key.as_str()) {
                    return Err(err(format!("unknown config key {section}.{key}")));
                }
            }
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (section, entries) in &self.sections {
            let _ = writeln!(out, "[{section}]");
            for (key, value) in entries {
                let _ = writeln!(out, "{key} = {value}");
            }
            out.push('\n');
        }
        out
    }
}

/// One typed lookup: explicit flag wins, then config value, then default.
pub fn resolve<T>(
    flag: Option<T>,
    cfg: &KvConfig,
    section: &str,
    key: &str,
    default: T,
) -> Result<T>
where
    T: std::str::FromStr + Clone,
    T::Err: std::fmt::Display,
{
    if let Some(value) = flag {
        return Ok(value);
    }
    match cfg.get(section, key) {
        Some(raw) => raw
            .parse()
            .map_err(|e| err(format!("config {section}.{key} = '{raw}': {e}"))),
        None => Ok(default),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_render_round_trip() {
        let cfg = KvConfig::parse("[a]\nx = 1\n# comment\n[b]\ny = two words\n").unwrap();
        assert_eq!(cfg.get("a", "x"), Some("1"));
        assert_eq!(cfg.get("b", "y"), Some("two words"));
        let again = KvConfig::parse(&cfg.render()).unwrap();
        assert_eq!(again.get("a", "x"), Some("1"));
    }

    #[test]
    fn rejects_key_outside_section() {
        assert!(KvConfig::parse("x = 1\n").is_err());
    }

    #[test]
    fn set_overrides() {
        let mut cfg = KvConfig::default();
        cfg.apply_set("dataset.classes=7").unwrap();
        assert_eq!(cfg.get("dataset", "classes"), Some("7"));
        assert!(cfg.apply_set("no_dots").is_err());
        assert!(cfg.apply_set("nosection=3").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let cfg = KvConfig::parse("[dataset]\nclasses = 5\nbogus = 1\n").unwrap();
        let allowed: &[(&str, &[&str])] = &[("dataset", &["classes"])];
        assert!(cfg.check_known(allowed).is_err());
    }

    #[test]
    fn resolution_order() {
        let mut cfg = KvConfig::default();
        cfg.insert("s", "k", "2");
        assert_eq!(resolve(Some(9u32), &cfg, "s", "k", 1).unwrap(), 9);
        assert_eq!(resolve(None::<u32>, &cfg, "s", "k", 1).unwrap(), 2);
        assert_eq!(resolve(None::<u32>, &cfg, "s", "other", 1).unwrap(), 1);
    }
}
