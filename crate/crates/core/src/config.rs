//! Flat `key = value` settings with layered overrides.
//!
//! Blank lines and lines starting with `#` are ignored. Values are kept as
//! strings and parsed on access.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Defaults for a command; their keys are the only accepted keys.
    pub fn with_defaults(defaults: &[(&str, &str)]) -> Self {
        Settings {
            values: defaults.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    /// Overlays a config file's text. Unknown keys and malformed lines are
    /// errors quoting the line.
    pub fn merge_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |why: &str| Error::Config(format!("{origin}:{}: {why}: {raw:?}", i + 1));
            let (k, v) = line.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            let k = k.trim();
            if !self.values.contains_key(k) {
                return Err(bad("unknown key"));
            }
            self.values.insert(k.to_string(), v.trim().to_string());
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound { path: path.to_path_buf() },
            _ => e.into(),
        })?;
        self.merge_text(&text, &path.display().to_string())
    }

    /// Sets `key` when `value` is present.
    pub fn set_opt<V: Display>(&mut self, key: &str, value: Option<V>) -> Result<()> {
        if let Some(v) = value {
            self.set(key, v)?;
        }
        Ok(())
    }

    pub fn set<V: Display>(&mut self, key: &str, value: V) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown key {key:?}"))),
        }
    }

    pub fn raw(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("unknown key {key:?}")))
    }

    pub fn get<V: FromStr>(&self, key: &str) -> Result<V> {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|_| Error::Config(format!("{key} = {raw:?} is not a valid value")))
    }

    /// `None` for an empty value.
    pub fn get_opt<V: FromStr>(&self, key: &str) -> Result<Option<V>> {
        if self.raw(key)?.is_empty() {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    pub fn render(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}
