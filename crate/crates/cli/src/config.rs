//! Layered run configuration: command defaults, then a JSON file, then
//! command-line flags, then `--set key=value` overrides. Every layer may only
//! touch keys that already exist in the defaults.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use srgan_core::{Error, Result};

pub const ECHO_FILE: &str = "run_config.json";

fn unknown(path: &str) -> Error {
    Error::InvalidArgument(format!("unknown configuration key '{path}'"))
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

/// Recursively writes `patch` into `base`. Objects merge key by key; any other
/// value replaces the target wholesale.
pub fn merge(base: &mut Value, patch: &Value, prefix: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let path = join(prefix, k);
                let slot = b.get_mut(k).ok_or_else(|| unknown(&path))?;
                merge(slot, v, &path)?;
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v.clone();
            Ok(())
        }
    }
}

/// Applies one `a.b.c=value` override. The value is read as JSON when it
/// parses, as a bare string otherwise. Numeric segments index arrays.
pub fn apply_set(base: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| {
        Error::InvalidArgument(format!("override '{assignment}' is not key=value"))
    })?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "override '{assignment}' has an empty key"
        )));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = base;
    for seg in key.split('.') {
        slot = match slot {
            Value::Object(m) => m.get_mut(seg),
            Value::Array(a) => seg.parse::<usize>().ok().and_then(|i| a.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| unknown(key))?;
    }
    *slot = value;
    Ok(())
}

pub fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Resolves the effective configuration of a command.
pub fn resolve<C: Serialize + DeserializeOwned>(
    defaults: &C,
    file: Option<&Path>,
    flags: Map<String, Value>,
    sets: &[String],
) -> Result<C> {
    let mut v = serde_json::to_value(defaults).expect("configuration serializes");
    if let Some(path) = file {
        merge(&mut v, &read_json(path)?, "")?;
    }
    merge(&mut v, &Value::Object(flags), "")?;
    for s in sets {
        apply_set(&mut v, s)?;
    }
    serde_json::from_value(v).map_err(|e| Error::InvalidArgument(format!("configuration: {e}")))
}

/// Writes the effective configuration of a run into `dir`.
pub fn write_echo(dir: &Path, echo: &Value) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let path = dir.join(ECHO_FILE);
    let text = serde_json::to_string_pretty(echo).expect("echo serializes") + "\n";
    fs::write(&path, text).map_err(|e| Error::Io { path, source: e })
}
