//! Experiment configuration: an optional TOML file plus command-line
//! overrides, resolved into typed per-command parameters.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize};
use toml::{Table, Value};

use crate::CliError;

/// Seed used when neither a flag, the config file nor the environment
/// provides one.
pub const DEFAULT_SEED: u64 = 0;
pub const SEED_ENV: &str = "CAPLAB_SEED";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// Contents of a config file. Command sections are kept as raw tables and
/// typed only after flags are merged in.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enum_cap: Option<usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub constants: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Table>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shatter: Option<Table>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<Table>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation_plot: Option<Table>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(default)]
    pub grid: BTreeMap<String, Vec<Value>>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    pub fn emit(&self) -> String {
        toml::to_string(self).expect("config tables always serialize")
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn section(&self, command: &str) -> Table {
        let table = match command {
            "bounds" => &self.bounds,
            "shatter" => &self.shatter,
            "estimate" => &self.estimate,
            "activation-plot" | "activation_plot" => &self.activation_plot,
            _ => &None,
        };
        table.clone().unwrap_or_default()
    }
}

/// Settings shared by every command after precedence is applied.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Globals {
    pub seed: u64,
    pub format: Format,
    pub out: Option<PathBuf>,
    pub enum_cap: usize,
    pub constants: BTreeMap<String, f64>,
}

/// Converts a flag value to a TOML value. Commas make a list; each item is
/// read as an integer, a float, a boolean or else a string.
pub fn flag_value(text: &str) -> Value {
    let items: Vec<Value> = text.split(',').map(|s| scalar(s.trim())).collect();
    if items.len() == 1 {
        items.into_iter().next().expect("one item")
    } else {
        Value::Array(items)
    }
}

fn scalar(s: &str) -> Value {
    if let Ok(i) = s.parse::<i64>() {
        Value::Integer(i)
    } else if let Ok(f) = s.parse::<f64>() {
        Value::Float(f)
    } else if let Ok(b) = s.parse::<bool>() {
        Value::Boolean(b)
    } else {
        Value::String(s.to_string())
    }
}

/// Parses `key=value` pairs; values may be comma lists.
pub fn parse_assignments(pairs: &[String]) -> Result<Table, CliError> {
    let mut table = Table::new();
    for pair in pairs {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("expected key=value, got {pair:?}")))?;
        table.insert(key.trim().to_string(), flag_value(value));
    }
    Ok(table)
}

/// Parses `--constants` arguments into a name → value map. Each argument
/// may hold several comma-separated `key=value` pairs.
pub fn parse_constants(args: &[String]) -> Result<BTreeMap<String, f64>, CliError> {
    let mut out = BTreeMap::new();
    for pair in args.iter().flat_map(|a| a.split(',')) {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("expected constant key=value, got {pair:?}")))?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("constant {key} is not a number: {value:?}")))?;
        out.insert(key.trim().to_string(), v);
    }
    Ok(out)
}

/// Overlays `overrides` on `base` key by key.
pub fn merge(mut base: Table, overrides: &Table) -> Table {
    for (k, v) in overrides {
        base.insert(k.clone(), v.clone());
    }
    base
}

pub fn typed<T: DeserializeOwned>(table: Table, what: &str) -> Result<T, CliError> {
    T::deserialize(Value::Table(table)).map_err(|e| CliError::Usage(format!("invalid {what} parameters: {e}")))
}

/// Accepts either a single value or a list.
pub fn one_or_many<'de, D, T>(d: D) -> Result<Vec<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany<T> {
        One(T),
        Many(Vec<T>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(v) => vec![v],
        OneOrMany::Many(v) => v,
    })
}

pub fn parse_with<T>(text: &str, what: &str) -> Result<T, CliError>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    text.parse()
        .map_err(|e| CliError::Usage(format!("invalid {what} {text:?}: {e}")))
}
