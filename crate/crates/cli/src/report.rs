//! Canonical report writing.
//!
//! Reports are written twice, as JSON and as CSV, from the same values.
//! The JSON form is canonical: keys sort alphabetically at every level
//! and every number is rounded to six significant digits before
//! serialization, so rewriting an unchanged report reproduces the file
//! byte for byte. The CSV twin is a flat header/row pair for spreadsheet
//! ingestion.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::CliError;

/// Rounds a float to six significant digits (not decimal places), which
/// keeps magnitudes honest across scales: 123456.7 → 123457, 0.00123456
/// stays 0.00123456.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let exp = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(5 - exp);
    (x * scale).round() / scale
}

/// Recursively rounds every number in a JSON tree to six significant
/// digits. Integers survive untouched (they round to themselves below
/// 2^53, and serde keeps their `u64`/`i64` representation).
fn round_tree(value: &mut Value) {
    match value {
        Value::Number(n) => {
            if let Some(f) = n.as_f64() {
                if n.as_i64().is_none() && n.as_u64().is_none() {
                    if let Some(rounded) = serde_json::Number::from_f64(round_sig(f)) {
                        *value = Value::Number(rounded);
                    }
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_tree),
        Value::Object(map) => map.values_mut().for_each(round_tree),
        _ => {}
    }
}

/// Serializes `data` to its canonical JSON string: alphabetical keys
/// (serde_json maps are ordered), six-significant-digit numbers, pretty
/// two-space indentation, trailing newline.
pub fn canonical_json<T: Serialize>(data: &T) -> Result<String, CliError> {
    let mut value = serde_json::to_value(data)
        .map_err(|e| CliError::Runtime(format!("report serialization failed: {e}")))?;
    round_tree(&mut value);
    let mut text = serde_json::to_string_pretty(&value)
        .map_err(|e| CliError::Runtime(format!("report serialization failed: {e}")))?;
    text.push('\n');
    Ok(text)
}

/// Writes `text` to `path`, creating parent directories. Writing is a
/// plain truncate-and-write: identical content yields identical bytes.
pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| {
                CliError::Runtime(format!("cannot create {}: {e}", parent.display()))
            })?;
        }
    }
    std::fs::write(path, text)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Writes the JSON + CSV twin files for a report. `prefix` is the path
/// without extension; the CSV columns come from the caller because CSV
/// has no nesting to infer. Returns the two paths written.
pub fn write_report<T: Serialize>(
    prefix: &Path,
    data: &T,
    csv_header: &str,
    csv_row: &str,
) -> Result<(PathBuf, PathBuf), CliError> {
    let json_path = prefix.with_extension("json");
    let csv_path = prefix.with_extension("csv");
    write_text(&json_path, &canonical_json(data)?)?;
    write_text(&csv_path, &format!("{csv_header}\n{csv_row}\n"))?;
    Ok((json_path, csv_path))
}

/// A flat name→number report (used for run accounting where no richer
/// struct exists). Keys are emitted in the order given for CSV and
/// alphabetically in JSON, consistent with every other report.
pub fn write_flat_report(
    prefix: &Path,
    fields: &[(&str, f64)],
) -> Result<(PathBuf, PathBuf), CliError> {
    let map: serde_json::Map<String, Value> = fields
        .iter()
        .filter_map(|(k, v)| serde_json::Number::from_f64(round_sig(*v)).map(|n| (k.to_string(), Value::Number(n))))
        .collect();
    let header = fields.iter().map(|(k, _)| *k).collect::<Vec<_>>().join(",");
    let row = fields
        .iter()
        .map(|(_, v)| format!("{:.6}", v))
        .collect::<Vec<_>>()
        .join(",");
    write_report(prefix, &Value::Object(map), &header, &row)
}

/// Writes a CSV file from a header and row iterator, creating parents.
pub fn write_csv<I, S>(path: &Path, header: &str, rows: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut text = String::from(header);
    text.push('\n');
    for row in rows {
        text.push_str(row.as_ref());
        text.push('\n');
    }
    write_text(path, &text)
}
