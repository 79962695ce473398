//! Option resolution: command-line flag, then config file, then default.
//!
//! A config file is either a JSON object or flat `key = value` lines with
//! `#` comments. Keys are the long flag names; `-` and `_` are
//! interchangeable. Every resolved value is recorded for the run manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    used: BTreeSet<String>,
    resolved: BTreeMap<String, Value>,
}

fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

fn json_scalar(key: &str, v: &Value) -> Result<String> {
    Ok(match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        Value::Bool(b) => b.to_string(),
        Value::Array(items) => items
            .iter()
            .map(|i| json_scalar(key, i))
            .collect::<Result<Vec<_>>>()?
            .join(","),
        Value::Null | Value::Object(_) => bail!("config key {key:?} must be a string, number, bool or list"),
    })
}

fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    if text.trim_start().starts_with('{') {
        let doc: BTreeMap<String, Value> = serde_json::from_str(text).context("config is not a flat JSON object")?;
        for (k, v) in doc {
            out.insert(normalize_key(&k), json_scalar(&k, &v)?);
        }
        return Ok(out);
    }
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {} is not key = value: {line:?}", i + 1))?;
        if out.insert(normalize_key(k), v.trim().to_string()).is_some() {
            bail!("config key {:?} is set twice", k.trim());
        }
    }
    Ok(out)
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                parse_config(&text).with_context(|| format!("in config {}", p.display()))?
            }
            None => BTreeMap::new(),
        };
        Ok(Self {
            file,
            ..Self::default()
        })
    }

    fn lookup<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            Some(text) => text
                .parse()
                .map(Some)
                .map_err(|e| anyhow!("config key {key:?}: cannot parse {text:?}: {e}")),
            None => Ok(None),
        }
    }

    fn record<T: Serialize>(&mut self, key: &str, value: &T) -> Result<()> {
        self.resolved.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn value<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Serialize,
        T::Err: Display,
    {
        let v = self.lookup(key, flag)?.unwrap_or(default);
        self.record(key, &v)?;
        Ok(v)
    }

    pub fn optional<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Serialize,
        T::Err: Display,
    {
        let v = self.lookup(key, flag)?;
        self.record(key, &v)?;
        Ok(v)
    }

    pub fn required<T>(&mut self, key: &str, flag: Option<T>) -> Result<T>
    where
        T: FromStr + Serialize,
        T::Err: Display,
    {
        let v = self
            .lookup(key, flag)?
            .ok_or_else(|| anyhow!("--{} is required (flag or config key)", key.replace('_', "-")))?;
        self.record(key, &v)?;
        Ok(v)
    }

    /// Records a value derived from other settings.
    pub fn derived<T: Serialize>(&mut self, key: &str, value: &T) -> Result<()> {
        self.record(key, value)
    }

    /// Rejects config keys the command never asked for.
    pub fn finish(&self) -> Result<()> {
        let unknown: Vec<&str> = self
            .file
            .keys()
            .filter(|k| !self.used.contains(*k))
            .map(String::as_str)
            .collect();
        if !unknown.is_empty() {
            bail!("unknown config keys: {}", unknown.join(", "));
        }
        Ok(())
    }

    pub fn resolved(&self) -> &BTreeMap<String, Value> {
        &self.resolved
    }
}
