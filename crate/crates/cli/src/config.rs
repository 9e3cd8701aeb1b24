//! JSON config support: a config file mirrors the long flag names and
//! supplies defaults; flags given on the command line always win.

use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use crate::CliError;

/// Loaded config table; empty when no `--config` was given.
pub struct Config {
    values: Map<String, Value>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Config, CliError> {
        let values = match path {
            None => Map::new(),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
                let parsed: Value = serde_json::from_str(&text)
                    .map_err(|e| CliError::input(format!("{}: line {}: {e}", path.display(), e.line())))?;
                match parsed {
                    Value::Object(map) => map,
                    _ => {
                        return Err(CliError::input(format!(
                            "{}: config must be a JSON object of flag values",
                            path.display()
                        )))
                    }
                }
            }
        };
        Ok(Config { values })
    }

    pub fn string(&self, flag: Option<String>, key: &str) -> Option<String> {
        flag.or_else(|| match self.values.get(key) {
            Some(Value::String(s)) => Some(s.clone()),
            Some(Value::Number(n)) => Some(n.to_string()),
            _ => None,
        })
    }

    pub fn path(&self, flag: Option<PathBuf>, key: &str) -> Option<PathBuf> {
        flag.or_else(|| self.string(None, key).map(PathBuf::from))
    }

    pub fn real(&self, flag: Option<f64>, key: &str) -> Result<Option<f64>, CliError> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(Value::Number(n)) => Ok(n.as_f64()),
            Some(Value::String(s)) => s
                .parse::<f64>()
                .map(Some)
                .map_err(|_| CliError::input(format!("config key `{key}`: not a number: `{s}`"))),
            Some(other) => Err(CliError::input(format!(
                "config key `{key}`: expected a number, got {other}"
            ))),
        }
    }

    pub fn count(&self, flag: Option<usize>, key: &str) -> Result<Option<usize>, CliError> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.real(None, key)? {
            None => Ok(None),
            Some(v) if v >= 0.0 && v.fract() == 0.0 => Ok(Some(v as usize)),
            Some(v) => Err(CliError::input(format!(
                "config key `{key}`: expected a non-negative integer, got {v}"
            ))),
        }
    }

    pub fn seed(&self, flag: Option<u64>, key: &str) -> Result<Option<u64>, CliError> {
        if flag.is_some() {
            return Ok(flag);
        }
        Ok(self.count(None, key)?.map(|v| v as u64))
    }
}

/// Missing-required-flag error after config merging.
pub fn require<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::input(format!("missing required --{flag} (flag or config)")))
}
