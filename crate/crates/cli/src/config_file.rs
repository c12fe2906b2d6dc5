//! Flat key-value config files.
//!
//! One `key = value` pair per line, `#` comments, keys named after the CLI
//! flags without the leading dashes. Values from the command line override
//! file values, which override built-in defaults.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{bail, Context, Result};

const KNOWN_KEYS: &[&str] = &[
    "mechanism",
    "bidders",
    "items",
    "estimator",
    "lambda",
    "pop",
    "sigma",
    "batch",
    "iters",
    "seed",
    "eval-every",
    "eval-batch",
    "lr",
    "pretrain-iters",
    "lambdas",
    "seeds",
    "v1s",
    "slope",
    "repeats",
    "estimators",
    "out",
];

#[derive(Debug, Default)]
pub struct ConfigFile {
    values: HashMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let mut values = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("config line {} is not `key = value`: `{raw}`", lineno + 1);
            };
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                bail!("unknown config key `{key}` on line {}", lineno + 1);
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    /// `flag.or(file value).or(default)`, parsing file values with context.
    pub fn resolve<T: std::str::FromStr>(
        &self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.get(key) {
            Some(raw) => raw
                .parse::<T>()
                .map_err(|e| anyhow::anyhow!("config key `{key}`: {e}")),
            None => Ok(default),
        }
    }
}
