//! Flat `key = value` configuration with `[section]` headers.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    sections: BTreeMap<String, BTreeMap<String, (String, usize)>>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut sections: BTreeMap<String, BTreeMap<String, (String, usize)>> = BTreeMap::new();
        let mut current = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let text = raw.split('#').next().unwrap_or("").trim();
            if text.is_empty() {
                continue;
            }
            if let Some(name) = text.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| CliError::data(format!("config line {line}: unterminated section header")))?;
                current = name.trim().to_string();
                continue;
            }
            let (key, value) = text
                .split_once('=')
                .ok_or_else(|| CliError::data(format!("config line {line}: expected key = value")))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(CliError::data(format!("config line {line}: empty key")));
            }
            let entry = sections.entry(current.clone()).or_default();
            if entry.insert(key.to_string(), (value.trim().to_string(), line)).is_some() {
                return Err(CliError::data(format!("config line {line}: duplicate key {key}")));
            }
        }
        Ok(KvConfig { sections })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    /// Rejects keys outside `allowed` for the sections listed there, and
    /// sections that are not listed at all.
    pub fn check_keys(&self, allowed: &[(&str, &[&str])]) -> Result<(), CliError> {
        for (section, keys) in &self.sections {
            let Some((_, known)) = allowed.iter().find(|(s, _)| s == section) else {
                return Err(CliError::data(format!("unknown config section [{section}]")));
            };
            for (key, (_, line)) in keys {
                if !known.contains(&key.as_str()) {
                    return Err(CliError::data(format!("config line {line}: unknown key {key} in [{section}]")));
                }
            }
        }
        Ok(())
    }

    pub fn raw(&self, section: &str, key: &str) -> Option<(&str, usize)> {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(|(v, l)| (v.as_str(), *l))
    }

    pub fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>, CliError> {
        match self.raw(section, key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::data(format!("config line {line}: cannot parse {key} = {v}"))),
        }
    }

    pub fn set<T: FromStr>(&self, section: &str, key: &str, target: &mut T) -> Result<(), CliError> {
        if let Some(v) = self.get(section, key)? {
            *target = v;
        }
        Ok(())
    }

    /// Comma-separated list of numbers.
    pub fn list(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        match self.raw(section, key) {
            None => Ok(None),
            Some((v, line)) => v
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|_| CliError::data(format!("config line {line}: {key} must be a comma-separated list of numbers"))),
        }
    }

    pub fn pair(&self, section: &str, key: &str) -> Result<Option<(f64, f64)>, CliError> {
        match self.list(section, key)? {
            None => Ok(None),
            Some(v) if v.len() == 2 => Ok(Some((v[0], v[1]))),
            Some(_) => {
                let line = self.raw(section, key).map(|r| r.1).unwrap_or(0);
                Err(CliError::data(format!("config line {line}: {key} needs two values")))
            }
        }
    }
}
