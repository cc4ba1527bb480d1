//! Run configuration files: versioned TOML with `key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};
use utrack_core::env::EnvConfig;
use utrack_core::ppo::TrainConfig;

use crate::error::{AppError, AppResult};
use crate::io::read_calibration_csv;

pub const SCHEMA_VERSION: u32 = 1;

/// Everything a command needs; a snapshot is written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Built-in plan name (`desk`, `paper`) or plan file path.
    #[serde(default)]
    pub plan: Option<String>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads for batched stepping; 0 uses every core.
    #[serde(default)]
    pub threads: usize,
    /// Checkpoint every this many updates (the final one is always written).
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
    /// Calibration table (`gamma,speed,dt,dpsi`) to refit the heading model from.
    #[serde(default)]
    pub calibration_csv: Option<PathBuf>,
}

fn default_checkpoint_every() -> u64 {
    50
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            env: EnvConfig::default(),
            train: TrainConfig::default(),
            plan: None,
            out_dir: None,
            threads: 0,
            checkpoint_every: default_checkpoint_every(),
            calibration_csv: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> AppResult<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(AppError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.env.validate().map_err(|e| prefix("env", e))?;
        self.train.validate().map_err(|e| prefix("train", e))?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

fn prefix(section: &str, e: utrack_core::Error) -> AppError {
    match e {
        utrack_core::Error::Config { field, reason } => AppError::Config(format!("field `{section}.{field}`: {reason}")),
        other => AppError::Config(format!("{section}: {other}")),
    }
}

/// Sets a dotted `key` in a TOML table. The value is parsed as TOML and
/// taken as a bare string when that fails.
pub fn apply_override(table: &mut Table, assignment: &str) -> AppResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| AppError::Usage(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(AppError::Usage(format!("override `{assignment}` has an empty key")));
    }
    let value = parse_value(raw.trim());
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| AppError::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Reads `path` (or starts from defaults), applies overrides, then parses,
/// refits the heading model when a calibration table is configured and
/// validates.
pub fn load_run_config(path: Option<&Path>, overrides: &[String]) -> AppResult<RunConfig> {
    let table = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| AppError::file(p, format!("cannot read config: {e}")))?;
            text.parse::<Table>().map_err(|e| AppError::file(p, format!("invalid TOML: {e}")))?
        }
        None => {
            let mut t = Table::new();
            t.insert("schema_version".into(), Value::Integer(SCHEMA_VERSION as i64));
            t
        }
    };
    finish(table, overrides)
}

/// `base` with overrides applied, e.g. a checkpoint's configuration snapshot.
pub fn override_run_config(base: &RunConfig, overrides: &[String]) -> AppResult<RunConfig> {
    let table = base.to_toml().parse::<Table>().expect("serialized config parses");
    finish(table, overrides)
}

fn finish(mut table: Table, overrides: &[String]) -> AppResult<RunConfig> {
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let mut cfg = parse_table(table)?;
    if let Some(csv) = cfg.calibration_csv.clone() {
        let data = read_calibration_csv(&csv)?;
        let noise = cfg.env.heading_model.noise_std;
        cfg.env.heading_model = utrack_core::kinematics::fit_heading_model(&data)?.model;
        cfg.env.heading_model.noise_std = noise;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_table(table: Table) -> AppResult<RunConfig> {
    match table.get("schema_version") {
        Some(Value::Integer(_)) => {}
        Some(_) => return Err(AppError::Config("field `schema_version` must be an integer".into())),
        None => return Err(AppError::Config("missing field `schema_version`".into())),
    }
    serde_path_to_error::deserialize(Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        AppError::Config(format!("field `{path}`: {}", e.into_inner()))
    })
}

pub fn parse_run_config(text: &str) -> AppResult<RunConfig> {
    let table = text.parse::<Table>().map_err(|e| AppError::Config(format!("invalid TOML: {e}")))?;
    let cfg = parse_table(table)?;
    cfg.validate()?;
    Ok(cfg)
}
