//! Option resolution: command-line flag, then `--config` file entry, then built-in default.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ksrecon::kspace::io::parse_key_values;

use crate::error::CliError;

/// Values from a flat `key=value` file plus a record of every value actually used.
#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    used: Vec<String>,
    pub resolved: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let file = match path {
            None => BTreeMap::new(),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                parse_key_values(&text).map_err(|e| CliError::Usage(e.to_string()))?
            }
        };
        Ok(Settings {
            file,
            ..Settings::default()
        })
    }

    pub fn opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.used.push(key.to_string());
        let value = match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                Some(text) => Some(text.parse::<T>().map_err(|e| {
                    CliError::Usage(format!("config key '{key}': cannot parse '{text}': {e}"))
                })?),
                None => None,
            },
        };
        if let Some(v) = &value {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(value)
    }

    pub fn or<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        match self.opt(key, flag)? {
            Some(v) => Ok(v),
            None => {
                self.resolved.insert(key.to_string(), default.to_string());
                Ok(default)
            }
        }
    }

    pub fn req<T>(&mut self, key: &str, flag: Option<T>) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.opt(key, flag)?
            .ok_or_else(|| CliError::Usage(format!("missing required option --{key}")))
    }

    /// Rejects config-file keys the command never asked for.
    pub fn finish(&self) -> Result<(), CliError> {
        match self.file.keys().find(|k| !self.used.contains(k)) {
            Some(k) => Err(CliError::Usage(format!("unknown config key '{k}'"))),
            None => Ok(()),
        }
    }
}
