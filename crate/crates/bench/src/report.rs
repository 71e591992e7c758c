//! CSV and JSON report writers.
//!
//! CSV reports start with one `#` comment line holding the JSON meta block
//! (schema, version and every parameter of the run), then a header row.
//! JSON reports are `{schema, version, meta, rows}`.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};

use ovq_core::{OvqError, Result};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportMeta {
    pub schema: String,
    pub version: u32,
    pub tool_version: String,
    pub params: Map<String, Value>,
}

impl ReportMeta {
    pub fn new(schema: &str, params: Value) -> Self {
        Self {
            schema: schema.to_string(),
            version: REPORT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            params: match params {
                Value::Object(m) => m,
                other => {
                    let mut m = Map::new();
                    m.insert("value".into(), other);
                    m
                }
            },
        }
    }
}

fn internal(e: impl std::fmt::Display) -> OvqError {
    OvqError::Internal(e.to_string())
}

pub fn write_report<W: Write, R: Serialize>(mut w: W, format: Format, meta: &ReportMeta, rows: &[R]) -> Result<()> {
    match format {
        Format::Json => {
            let doc = json!({
                "schema": meta.schema,
                "version": meta.version,
                "meta": meta,
                "rows": rows,
            });
            serde_json::to_writer_pretty(&mut w, &doc).map_err(internal)?;
            w.write_all(b"\n")?;
        }
        Format::Csv => {
            writeln!(w, "# {}", serde_json::to_string(meta).map_err(internal)?)?;
            let mut cw = csv::Writer::from_writer(&mut w);
            for r in rows {
                cw.serialize(r).map_err(internal)?;
            }
            cw.flush()?;
        }
    }
    Ok(())
}

/// Parse a CSV report back into its meta block and rows.
pub fn read_csv_report<R: BufRead, T: DeserializeOwned>(mut r: R) -> Result<(Value, Vec<T>)> {
    let mut first = String::new();
    r.read_line(&mut first)?;
    let meta_text = first.strip_prefix("# ").ok_or_else(|| OvqError::Parse {
        line: 1,
        message: "missing meta comment line".into(),
    })?;
    let meta: Value = serde_json::from_str(meta_text.trim()).map_err(|e| OvqError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let mut rows = Vec::new();
    for (i, rec) in csv::Reader::from_reader(r).deserialize().enumerate() {
        rows.push(rec.map_err(|e| OvqError::Parse {
            line: i + 3,
            message: e.to_string(),
        })?);
    }
    Ok((meta, rows))
}
