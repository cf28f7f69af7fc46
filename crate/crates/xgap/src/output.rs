//! CSV and JSON writers.
//!
//! Both formats are produced from the same `serde_json::Value` rows, so they
//! carry identical numbers. CSV files start with `#` metadata lines holding the
//! command, the seed and the fully resolved config.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde_json::{json, Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// Rows with a fixed column order.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Table {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Rows as JSON objects keyed by column name.
    pub fn to_json(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|row| {
                    let obj: Map<String, Value> = self
                        .columns
                        .iter()
                        .cloned()
                        .zip(row.iter().cloned())
                        .collect();
                    Value::Object(obj)
                })
                .collect(),
        )
    }

    /// Flattens a nested JSON document into `key,value` rows, with dotted
    /// paths as keys.
    pub fn flatten(doc: &Value) -> Self {
        let mut t = Table::new(["key", "value"]);
        flatten_into(doc, String::new(), &mut t);
        t
    }
}

fn flatten_into(v: &Value, prefix: String, t: &mut Table) {
    let join = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                flatten_into(child, join(k), t);
            }
        }
        Value::Array(items) if !items.is_empty() => {
            for (i, child) in items.iter().enumerate() {
                flatten_into(child, join(&i.to_string()), t);
            }
        }
        other => t.push(vec![Value::String(prefix), other.clone()]),
    }
}

fn csv_field(v: &Value) -> String {
    let text = match v {
        Value::Null => return String::new(),
        Value::String(s) => s.clone(),
        Value::Array(a) if a.is_empty() => return String::new(),
        other => other.to_string(),
    };
    if text.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text
    }
}

/// Everything one invocation writes.
#[derive(Debug, Clone)]
pub struct Document<'a> {
    pub command: &'a str,
    pub seed: u64,
    pub config: Value,
    pub results: Value,
    /// The CSV rendering of `results`.
    pub table: Table,
}

impl Document<'_> {
    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => {
                let doc = json!({
                    "command": self.command,
                    "config": self.config,
                    "results": self.results,
                });
                let mut s = serde_json::to_string_pretty(&doc).expect("json values serialise");
                s.push('\n');
                s
            }
            Format::Csv => {
                let mut s = String::new();
                writeln!(s, "# xgap {}", self.command).unwrap();
                writeln!(s, "# seed: {}", self.seed).unwrap();
                writeln!(s, "# config: {}", self.config).unwrap();
                writeln!(s, "{}", self.table.columns.join(",")).unwrap();
                for row in &self.table.rows {
                    let fields: Vec<String> = row.iter().map(csv_field).collect();
                    writeln!(s, "{}", fields.join(",")).unwrap();
                }
                s
            }
        }
    }

    /// Writes `<dir>/<stem>.<ext>`, creating `dir` if needed.
    pub fn write(&self, dir: &Path, stem: &str, format: Format) -> io::Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(format!("{stem}.{}", format.extension()));
        fs::write(&path, self.render(format))?;
        Ok(path)
    }
}

/// Reads the data rows of a CSV file written by [`Document::render`],
/// skipping metadata lines. Quoted fields are unescaped.
pub fn read_csv_rows(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines
        .next()
        .map(|h| h.split(',').map(str::to_string).collect())
        .unwrap_or_default();
    let rows = lines.map(split_csv_line).collect();
    (header, rows)
}

fn split_csv_line(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', _) => quoted = !quoted,
            (',', false) => out.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    out.push(cur);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_paths() {
        let t = Table::flatten(&json!({"a": {"b": 1, "c": [2, {"d": null}]}, "e": []}));
        let keys: Vec<&str> = t.rows.iter().map(|r| r[0].as_str().unwrap()).collect();
        assert_eq!(keys, ["a.b", "a.c.0", "a.c.1.d", "e"]);
    }

    #[test]
    fn csv_quoting_round_trips() {
        let mut t = Table::new(["x", "y"]);
        t.push(vec![json!("a,\"b\""), json!(0.1)]);
        let doc = Document {
            command: "test",
            seed: 3,
            config: json!({}),
            results: t.to_json(),
            table: t,
        };
        let text = doc.render(Format::Csv);
        assert!(text.starts_with("# xgap test\n# seed: 3\n"));
        let (header, rows) = read_csv_rows(&text);
        assert_eq!(header, ["x", "y"]);
        assert_eq!(rows, [["a,\"b\"", "0.1"]]);
    }
}
