//! Merging of JSON config files with command-line flags, and the resolved
//! config written next to every output.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const RESOLVED: &str = "resolved_config.json";

/// Keys written into resolved configs that are not options.
const STAMP_KEYS: [&str; 2] = ["command", "tool_version"];

fn object(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => Map::new(),
    }
}

/// Flags override the file; absent flags (null) keep the file's values.
pub fn merge<T: Serialize + DeserializeOwned>(flags: &T, file: Option<&Path>, command: &str) -> Result<T> {
    let mut base = match file {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            let v: Value = serde_json::from_str(&text)
                .map_err(|e| pwrd::Error::Config(format!("config {}: {e}", p.display())))?;
            let mut m = object(v);
            if let Some(Value::String(c)) = m.get("command") {
                if c != command {
                    return Err(pwrd::Error::Config(format!("config was written for '{c}', not '{command}'")).into());
                }
            }
            for k in STAMP_KEYS {
                m.remove(k);
            }
            m
        }
        None => Map::new(),
    };
    for (k, v) in object(serde_json::to_value(flags)?) {
        if !v.is_null() {
            base.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(base)).map_err(|e| pwrd::Error::Config(e.to_string()).into())
}

pub fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// Write the fully resolved options plus command and version stamps.
pub fn write_resolved<T: Serialize>(dir: &Path, command: &str, resolved: &T) -> Result<()> {
    let mut m = Map::new();
    m.insert("command".into(), Value::String(command.into()));
    m.insert("tool_version".into(), Value::String(VERSION.into()));
    m.extend(object(serde_json::to_value(resolved)?));
    fs::write(dir.join(RESOLVED), to_json(&Value::Object(m)))?;
    Ok(())
}
