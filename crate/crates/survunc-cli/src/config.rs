//! Config-file layering, error classification, and `run.json` emission.
//!
//! Every flag can instead come from a JSON config file (`--config`); explicit
//! flags win. A `run.json` written by a previous run is itself a valid config
//! file, so any run can be reproduced from its own record.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// CLI failure, classified for the exit code: usage errors (bad flags,
/// missing/invalid inputs) exit 2, runtime failures exit 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

pub fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

pub fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Key → value defaults for the current command's flags.
#[derive(Debug, Default)]
pub struct ConfigMap(serde_json::Map<String, Value>);

/// Load a config file for `command`. Accepts either a flat `{flag: value}`
/// object or a `run.json` (`{"command": …, "args": {…}}`); in the latter
/// case the recorded command must match the one being run.
pub fn load_config(path: &Path, command: &str) -> Result<ConfigMap, CliError> {
    if !path.exists() {
        return Err(usage(format!("config file `{}` not found", path.display())));
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("config `{}`: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| usage(format!("config `{}`: {e}", path.display())))?;
    let Value::Object(mut map) = value else {
        return Err(usage(format!(
            "config `{}` must be a JSON object",
            path.display()
        )));
    };
    if let Some(Value::String(recorded)) = map.get("command") {
        if map.contains_key("args") {
            if recorded != command {
                return Err(usage(format!(
                    "config `{}` records a `{recorded}` run, but the current command is `{command}`",
                    path.display()
                )));
            }
            let Some(Value::Object(args)) = map.remove("args") else {
                return Err(usage(format!(
                    "config `{}`: `args` must be an object",
                    path.display()
                )));
            };
            return Ok(ConfigMap(args));
        }
    }
    Ok(ConfigMap(map))
}

/// Flag value if given, else the config value under `key`, else `None`.
pub fn pick<T: DeserializeOwned>(
    flag: Option<T>,
    cfg: &ConfigMap,
    key: &str,
) -> Result<Option<T>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match cfg.0.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|e| usage(format!("config key `{key}`: {e}"))),
    }
}

/// Resolve a required parameter.
pub fn req<T>(value: Option<T>, key: &str) -> Result<T, CliError> {
    value.ok_or_else(|| usage(format!("missing `--{key}` (no config value either)")))
}

/// Write `run.json` into `dir` (created if missing) before any other output.
/// The `args` echo is complete: feeding the file back via `--config`
/// reproduces the run.
pub fn write_run_json(
    dir: &Path,
    command: &str,
    args: &impl Serialize,
    notes: &[(&str, &str)],
) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| runtime(format!("cannot create `{}`: {e}", dir.display())))?;
    let mut root = serde_json::Map::new();
    root.insert("format".into(), "survunc-run".into());
    root.insert("version".into(), 1u32.into());
    root.insert("survunc-version".into(), env!("CARGO_PKG_VERSION").into());
    root.insert("command".into(), command.into());
    root.insert(
        "args".into(),
        serde_json::to_value(args).map_err(runtime)?,
    );
    if !notes.is_empty() {
        let mut m = serde_json::Map::new();
        for (k, v) in notes {
            m.insert((*k).into(), (*v).into());
        }
        root.insert("notes".into(), Value::Object(m));
    }
    let text = serde_json::to_string_pretty(&Value::Object(root)).map_err(runtime)? + "\n";
    std::fs::write(dir.join("run.json"), text).map_err(runtime)?;
    Ok(())
}
