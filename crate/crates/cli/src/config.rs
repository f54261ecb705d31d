//! Flat `key = value` configuration files with command-line overrides.
//!
//! Lines are `key = value` (or `key value`); `#` starts a comment. List
//! values are comma-separated. Later `--set key=value` overrides replace
//! file entries.

use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

impl Config {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let mut values = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = match line.split_once('=') {
                Some((k, v)) => (k.trim(), v.trim()),
                None => match line.split_once(char::is_whitespace) {
                    Some((k, v)) => (k.trim(), v.trim()),
                    None => {
                        return Err(ConfigError(format!(
                            "{}:{}: expected 'key = value'",
                            path.display(),
                            no + 1
                        )))
                    }
                },
            };
            values.insert(key.to_string(), value.to_string());
        }
        Ok(Config { values })
    }

    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<()> {
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("override '{s}' is not key=value")))?;
            self.values.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| ConfigError(format!("bad value '{v}' for key '{key}'"))),
        }
    }

    pub fn get_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list value.
    pub fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|item| {
                    item.trim()
                        .parse::<T>()
                        .map_err(|_| ConfigError(format!("bad list item '{item}' for key '{key}'")))
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn parses_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "# comment\nn = 360\np = 0.05,0.1    # densities\nmodel ero").unwrap();
        drop(f);
        let mut cfg = Config::from_file(&path).unwrap();
        assert_eq!(cfg.get::<usize>("n").unwrap(), Some(360));
        assert_eq!(cfg.list::<f64>("p").unwrap().unwrap(), vec![0.05, 0.1]);
        assert_eq!(cfg.raw("model"), Some("ero"));
        cfg.apply_overrides(&["n=100".into()]).unwrap();
        assert_eq!(cfg.get_or::<usize>("n", 0).unwrap(), 100);
        assert!(cfg.get::<usize>("p").is_err());
        assert!(cfg.get::<usize>("absent").unwrap().is_none());
    }
}
