//! Numeric CSV tables and JSON sidecars shared by every exported artifact.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a table
//! read back parses to bit-identical values and identical inputs always give
//! byte-identical files.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{GfaError, Result};

/// A header plus rows of numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// Free-form `# key=value` lines written above the header.
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Table {
            comments: Vec::new(),
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Index of a named column.
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Value of a `# key=value` comment.
    pub fn tag(&self, key: &str) -> Option<&str> {
        self.comments
            .iter()
            .find_map(|c| c.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
    }

    pub fn to_csv_string(&self) -> String {
        let mut prefix = String::new();
        for c in &self.comments {
            prefix.push_str("# ");
            prefix.push_str(c);
            prefix.push('\n');
        }
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(|v| format_float(*v)))
                .expect("in-memory write");
        }
        prefix + &String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 output")
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let comments = text
            .lines()
            .take_while(|l| l.starts_with('#'))
            .map(|l| l.trim_start_matches('#').trim().to_string())
            .collect();
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let header: Vec<String> = r
            .headers()
            .map_err(|e| GfaError::Parse(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| GfaError::Parse(e.to_string()))?;
            let row = rec
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| GfaError::Parse(format!("row {}: `{f}` is not a number", line + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != header.len() {
                return Err(GfaError::Parse(format!(
                    "row {} has {} fields, header has {}",
                    line + 1,
                    row.len(),
                    header.len()
                )));
            }
            rows.push(row);
        }
        Ok(Table { comments, header, rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_csv_string())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_csv_str(&read_text(path)?)
    }
}

/// Shortest round-trip representation; integers keep no trailing `.0`.
pub fn format_float(v: f64) -> String {
    if v.is_finite() && v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| GfaError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| GfaError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| GfaError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| GfaError::Parse(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| GfaError::Parse(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let mut t = Table::new(vec!["t".into(), "y_1".into()]);
        t.push(vec![0.0, 1.0 / 3.0]);
        t.push(vec![0.1, -2.5e-300]);
        t.push(vec![2.0, f64::INFINITY]);
        t.comments.push("kind=gfa_fluid".into());
        let text = t.to_csv_string();
        assert!(text.starts_with("# kind=gfa_fluid\nt,y_1\n0,0.3333333333333333\n"));
        let back = Table::from_csv_str(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.column("y_1"), Some(1));
        assert_eq!(back.tag("kind"), Some("gfa_fluid"));
    }

    #[test]
    fn ragged_rows_are_rejected() {
        assert!(Table::from_csv_str("a,b\n1,2\n3\n").is_err());
        assert!(Table::from_csv_str("a\nx\n").is_err());
    }
}
