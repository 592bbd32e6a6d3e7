//! Tables, manifests and error records.
//!
//! Floats are written with 17 significant digits so that parsing returns the
//! same bits. Non-finite values are `NaN`/`inf` in CSV and `null` in JSON lines.
//! JSON-lines tables open with a `{"columns": [...]}` line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    JsonLines,
}

impl Format {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(Format::Csv),
            "json_lines" | "jsonl" => Some(Format::JsonLines),
            _ => None,
        }
    }

    pub fn extension(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::JsonLines => "jsonl",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputTable {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl OutputTable {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: vec![],
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self, format: Format) -> String {
        let mut s = String::new();
        match format {
            Format::Csv => {
                s.push_str(&self.header.join(","));
                s.push('\n');
                for row in &self.rows {
                    let cells: Vec<String> = row.iter().map(|&x| fmt_float(x)).collect();
                    s.push_str(&cells.join(","));
                    s.push('\n');
                }
            }
            Format::JsonLines => {
                s.push_str(&serde_json::to_string(&serde_json::json!({ "columns": self.header })).expect("json"));
                s.push('\n');
                for row in &self.rows {
                    let cells: Vec<String> = self
                        .header
                        .iter()
                        .zip(row)
                        .map(|(h, &x)| {
                            let v = if x.is_finite() { fmt_float(x) } else { "null".into() };
                            format!("{}:{v}", serde_json::to_string(h).expect("json"))
                        })
                        .collect();
                    s.push('{');
                    s.push_str(&cells.join(","));
                    s.push_str("}\n");
                }
            }
        }
        s
    }
}

pub fn fmt_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// Reads a table written by [`OutputTable::render`].
pub fn parse_table(text: &str, format: Format) -> Result<(Vec<String>, Vec<Vec<f64>>), String> {
    match format {
        Format::Csv => {
            let mut lines = text.lines();
            let header: Vec<String> = lines
                .next()
                .ok_or("empty file")?
                .split(',')
                .map(String::from)
                .collect();
            let rows = lines
                .map(|l| l.split(',').map(|c| c.parse::<f64>().map_err(|e| e.to_string())).collect())
                .collect::<Result<_, _>>()?;
            Ok((header, rows))
        }
        Format::JsonLines => {
            let mut header = vec![];
            let mut rows = vec![];
            for line in text.lines() {
                let v: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
                if let Some(cols) = v.get("columns").and_then(|c| c.as_array()) {
                    header = cols.iter().filter_map(|c| c.as_str().map(String::from)).collect();
                    continue;
                }
                let obj = v.as_object().ok_or("row is not an object")?;
                rows.push(header.iter().map(|h| obj.get(h).and_then(|x| x.as_f64()).unwrap_or(f64::NAN)).collect());
            }
            Ok((header, rows))
        }
    }
}

/// Writes every table into `dir` and returns the file names in order.
pub fn emit(dir: &Path, format: Format, tables: &[OutputTable]) -> std::io::Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let mut names = vec![];
    for t in tables {
        let name = format!("{}.{}", t.name, format.extension());
        write_atomic(&dir.join(&name), t.render(format).as_bytes())?;
        names.push(name);
    }
    Ok(names)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp: PathBuf = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
    }
    fs::rename(tmp, path)
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub subcommand: String,
    pub code_version: String,
    pub seed: u64,
    pub config_hash: Option<String>,
    pub config: serde_json::Value,
    pub guards: serde_json::Value,
    pub format: Format,
    pub files: Vec<String>,
    pub summary: serde_json::Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorRecord {
    pub error: String,
    pub message: String,
    pub key: Option<String>,
    pub completed_streams: Option<Vec<u64>>,
}
