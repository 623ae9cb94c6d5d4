//! Deterministic report emission: floats are printed in Rust's shortest
//! round-trip form, so files are bitwise stable across reruns and thread
//! counts and reparse to the exact computed values.

use std::io::Write;
use std::path::Path;

use crate::config::{runtime, CliError};

pub fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Missing values print as `NA`.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_else(|| "NA".into())
}

pub fn write_table(path: &Path, header: &str, rows: &[String]) -> Result<(), CliError> {
    let file = std::fs::File::create(path)
        .map_err(|e| runtime(format!("cannot create `{}`: {e}", path.display())))?;
    let mut out = std::io::BufWriter::new(file);
    (|| -> std::io::Result<()> {
        writeln!(out, "{header}")?;
        for row in rows {
            writeln!(out, "{row}")?;
        }
        out.flush()
    })()
    .map_err(|e| runtime(format!("cannot write `{}`: {e}", path.display())))
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(runtime)? + "\n";
    std::fs::write(path, text)
        .map_err(|e| runtime(format!("cannot write `{}`: {e}", path.display())))
}
