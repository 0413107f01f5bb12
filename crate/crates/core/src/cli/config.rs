//! Run configuration: one TOML document with `data`, `model`, `loss` and
//! `trainer` tables, plus dotted-path overrides from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::losses::LossWeights;
use crate::network::ModelConfig;
use crate::trainer::TrainConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub root: PathBuf,
    /// Defaults to `palette.txt` under the root.
    pub palette: Option<PathBuf>,
    /// Scene-id list files. Without them a seeded split of every scene under
    /// the root is made and the held-out part is used for evaluation.
    pub train_split: Option<PathBuf>,
    pub eval_split: Option<PathBuf>,
    pub test_fraction: f64,
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root: PathBuf::from("data"),
            palette: None,
            train_split: None,
            eval_split: None,
            test_fraction: 0.2,
            split_seed: 0,
        }
    }
}

impl DataConfig {
    pub fn palette_path(&self) -> PathBuf {
        self.palette
            .clone()
            .unwrap_or_else(|| self.root.join("palette.txt"))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub trainer: TrainConfig,
}

fn config_err(key: impl Into<String>, message: impl ToString) -> Error {
    Error::Config {
        key: key.into(),
        message: message.to_string(),
    }
}

/// Parses a command-line value as a TOML value, falling back to a string.
pub fn parse_value(text: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {text}")) {
        Ok(mut t) => t.remove("v").expect("key just parsed"),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

/// Sets `key` (dotted path) in `table`, creating intermediate tables.
pub fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_err(key, "malformed key"));
    }
    let (last, parents) = parts.split_last().expect("split yields a part");
    let mut cur = table;
    for (i, p) in parents.iter().enumerate() {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(config_err(parts[..=i].join("."), "is not a table")),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Builds a config from a TOML table, reporting the offending key path.
    pub fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: RunConfig =
            serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
                let key = e.path().to_string();
                config_err(key, e.into_inner().message())
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with(text, &[])
    }

    pub fn parse_with(text: &str, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| config_err(".", e.message()))?;
        for (k, v) in overrides {
            set_path(&mut table, k, v.clone())?;
        }
        Self::from_table(table)
    }

    /// Reads `path` (defaults only when `None`) and applies overrides.
    pub fn load(path: Option<&Path>, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::parse_with(&text, overrides)
    }

    pub fn to_table(&self) -> toml::Table {
        toml::Table::try_from(self).expect("config serialises")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.trainer.validate()?;
        if !(self.data.test_fraction > 0.0 && self.data.test_fraction < 1.0) {
            return Err(config_err(
                "data.test_fraction",
                format!("must be in (0, 1), got {}", self.data.test_fraction),
            ));
        }
        Ok(())
    }

    /// Uses `seed` for parameter initialisation and batch order.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.model.seed = seed;
        self.trainer.seed = seed;
        self
    }
}

/// Splits raw `--a.b value` / `--a.b=value` arguments into overrides.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, toml::Value)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(body) = arg.strip_prefix("--") else {
            return Err(config_err(
                arg.as_str(),
                "expected an override of the form --section.key value",
            ));
        };
        let (key, value) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| config_err(body, "missing value"))?;
                (body.to_string(), v.clone())
            }
        };
        if !key.contains('.') {
            return Err(config_err(
                key,
                "overrides take a dotted key such as trainer.total_epochs",
            ));
        }
        out.push((key, parse_value(&value)));
    }
    Ok(out)
}
