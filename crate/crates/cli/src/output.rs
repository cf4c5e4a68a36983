//! Report serialisation. CSV output is the JSON report flattened to
//! `path,value` rows with floats written to 17 significant digits.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::config::Format;
use crate::CliError;

pub fn render<T: Serialize>(report: &T, format: Format) -> Result<String, CliError> {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(report).map_err(|e| CliError::Io(e.to_string()))?;
            s.push('\n');
            Ok(s)
        }
        Format::Csv => {
            let value = serde_json::to_value(report).map_err(|e| CliError::Io(e.to_string()))?;
            let mut rows = Vec::new();
            flatten(&value, String::new(), &mut rows);
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["path", "value"])
                .map_err(|e| CliError::Io(e.to_string()))?;
            for (path, v) in rows {
                w.write_record([path, v])
                    .map_err(|e| CliError::Io(e.to_string()))?;
            }
            let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| CliError::Io(e.to_string()))
        }
    }
}

pub fn emit(text: &str, path: Option<&Path>) -> Result<(), CliError> {
    match path {
        Some(p) => {
            std::fs::write(p, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", p.display())))
        }
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io(e.to_string())),
    }
}

/// `{:.16e}` keeps 17 significant digits, enough to recover every f64.
pub fn float17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn flatten(value: &Value, path: String, rows: &mut Vec<(String, String)>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                flatten(v, join(&path, k), rows);
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                let key = v
                    .get("name")
                    .and_then(Value::as_str)
                    .map_or_else(|| i.to_string(), str::to_string);
                flatten(v, join(&path, &key), rows);
            }
        }
        Value::Number(n) => {
            let text = if n.is_f64() {
                float17(n.as_f64().unwrap_or(f64::NAN))
            } else {
                n.to_string()
            };
            rows.push((path, text));
        }
        Value::String(s) => rows.push((path, s.clone())),
        Value::Bool(b) => rows.push((path, b.to_string())),
        Value::Null => rows.push((path, String::new())),
    }
}
