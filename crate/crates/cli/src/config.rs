//! Layered configuration: scenario preset, then config file, then `--set`
//! overrides, then dedicated flags.

use std::fs;
use std::path::Path;

use pic_core::harness::{ControllerKind, ExperimentSpec, Scenario};
use toml::{Table, Value};

/// Configuration problem; reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// Values supplied through dedicated flags.
#[derive(Debug, Clone, Default)]
pub struct FlagOverrides {
    pub scenario: Option<String>,
    pub controller: Option<String>,
    pub seed: Option<u64>,
    pub out_dir: Option<String>,
}

pub fn read_table(path: &Path) -> Result<Table, ConfigError> {
    let text = fs::read_to_string(path)
        .map_err(|e| err(format!("cannot read config '{}': {e}", path.display())))?;
    text.parse::<Table>()
        .map_err(|e| err(format!("{}: {e}", path.display())))
}

/// Parses the right-hand side of `--set key=value` as a TOML value, falling
/// back to a bare string.
fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<(), ConfigError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(err(format!("invalid key '{key}'")));
    }
    let mut cur = table;
    for (i, p) in parts[..parts.len() - 1].iter().enumerate() {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => {
                return Err(err(format!(
                    "'{}' is not a section",
                    parts[..=i].join(".")
                )))
            }
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Applies `key=value` assignments.
pub fn apply_sets(table: &mut Table, sets: &[String]) -> Result<(), ConfigError> {
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| err(format!("--set expects key=value, got '{s}'")))?;
        set_path(table, k.trim(), parse_value(v.trim()))?;
    }
    Ok(())
}

pub fn apply_flags(table: &mut Table, flags: &FlagOverrides) -> Result<(), ConfigError> {
    if let Some(s) = &flags.scenario {
        if Scenario::parse(s).is_none() {
            return Err(err(format!("unknown scenario '{s}'")));
        }
        set_path(table, "experiment.scenario", Value::String(s.clone()))?;
    }
    if let Some(c) = &flags.controller {
        if ControllerKind::parse(c).is_none() {
            return Err(err(format!("unknown controller '{c}'")));
        }
        set_path(table, "experiment.controller", Value::String(c.clone()))?;
    }
    if let Some(seed) = flags.seed {
        let v = i64::try_from(seed).map_err(|_| err("seed must fit in a signed 64-bit integer"))?;
        set_path(table, "experiment.seed", Value::Integer(v))?;
    }
    if let Some(d) = &flags.out_dir {
        set_path(table, "experiment.out_dir", Value::String(d.clone()))?;
    }
    Ok(())
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn scenario_of(user: &Table) -> Result<Scenario, ConfigError> {
    let raw = user
        .get("experiment")
        .and_then(|e| e.as_table())
        .and_then(|e| e.get("scenario"));
    match raw {
        None => Ok(Scenario::default()),
        Some(Value::String(s)) => {
            Scenario::parse(s).ok_or_else(|| err(format!("experiment.scenario: unknown scenario '{s}'")))
        }
        Some(other) => Err(err(format!(
            "experiment.scenario: expected a string, found {}",
            other.type_str()
        ))),
    }
}

/// Merges `user` over the preset of its scenario and deserializes the result.
pub fn resolve(user: Table) -> Result<ExperimentSpec, ConfigError> {
    let scenario = scenario_of(&user)?;
    let preset = ExperimentSpec::preset(scenario);
    let mut merged = Table::try_from(&preset).map_err(|e| err(format!("internal: {e}")))?;
    merge(&mut merged, user);
    let spec: ExperimentSpec = serde_path_to_error::deserialize(Value::Table(merged)).map_err(|e| {
        let path = e.path().to_string();
        err(format!("{path}: {}", e.into_inner()))
    })?;
    spec.validate().map_err(|e| err(e.to_string()))?;
    Ok(spec)
}

/// Full pipeline for one config source.
pub fn load_spec(
    config: Option<&Path>,
    sets: &[String],
    flags: &FlagOverrides,
) -> Result<ExperimentSpec, ConfigError> {
    let mut user = match config {
        Some(p) => read_table(p)?,
        None => Table::new(),
    };
    apply_sets(&mut user, sets)?;
    apply_flags(&mut user, flags)?;
    resolve(user)
}

/// TOML dump of the effective configuration.
pub fn dump(spec: &ExperimentSpec) -> String {
    toml::to_string_pretty(spec).unwrap_or_else(|e| format!("# cannot serialize: {e}\n"))
}
