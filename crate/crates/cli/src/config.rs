//! Run configuration files. Precedence is flags, then the file, then built-in defaults;
//! the seed additionally falls back to `LANEGRAPH_SEED` before the default of 0.

use std::path::Path;

use anyhow::Result;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::Usage;

pub const SEED_ENV: &str = "LANEGRAPH_SEED";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub synth: toml::Table,
    #[serde(default)]
    pub preprocess: toml::Table,
    #[serde(default)]
    pub train: toml::Table,
    #[serde(default)]
    pub sample: toml::Table,
    #[serde(default)]
    pub eval: toml::Table,
    #[serde(default)]
    pub render: toml::Table,
    #[serde(default)]
    pub bench: toml::Table,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Usage(format!("bad config {}: {e}", path.display())).into())
    }

    /// Flag, then a `seed` key in the command's section, then the top-level key, then the
    /// environment, then 0.
    pub fn seed(&self, flag: Option<u64>, section: &toml::Table) -> Result<u64> {
        if let Some(s) = flag {
            return Ok(s);
        }
        if let Some(v) = section.get("seed") {
            return v
                .as_integer()
                .and_then(|i| u64::try_from(i).ok())
                .ok_or_else(|| Usage(format!("config seed must be a non-negative integer, got {v}")).into());
        }
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Usage(format!("{SEED_ENV} must be a non-negative integer, got {v:?}")).into()),
            Err(_) => Ok(0),
        }
    }
}

/// Deserializes a config section into `T`, with `T`'s defaults for missing keys.
pub fn section<T: DeserializeOwned>(table: &toml::Table, name: &str) -> Result<T> {
    toml::Value::Table(table.clone())
        .try_into()
        .map_err(|e| Usage(format!("bad [{name}] section: {e}")).into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_file_beats_default() {
        let cfg: FileConfig = toml::from_str("seed = 5\n[train]\nseed = 9\n").unwrap();
        assert_eq!(cfg.seed(Some(1), &cfg.train).unwrap(), 1);
        assert_eq!(cfg.seed(None, &cfg.train).unwrap(), 9);
        assert_eq!(cfg.seed(None, &cfg.synth).unwrap(), 5);
    }

    #[test]
    fn unknown_sections_are_rejected() {
        assert!(toml::from_str::<FileConfig>("[serve]\nport = 1\n").is_err());
    }
}
