//! Result tables, JSON documents, plot data and the run manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::{Map, Value};

use crate::config::Format;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(f64),
    I(i64),
    S(String),
    B(bool),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::F(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::I(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::S(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::S(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::B(v)
    }
}

impl Cell {
    /// Round-trip decimal form: 17 significant digits for floats.
    fn csv(&self) -> String {
        match self {
            Cell::F(v) => format_float(*v),
            Cell::I(v) => v.to_string(),
            Cell::B(v) => v.to_string(),
            Cell::S(s) => {
                if s.contains([',', '"', '\n']) {
                    format!("\"{}\"", s.replace('"', "\"\""))
                } else {
                    s.clone()
                }
            }
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::F(v) => serde_json::Number::from_f64(*v).map_or(Value::Null, Value::Number),
            Cell::I(v) => Value::from(*v),
            Cell::B(v) => Value::Bool(*v),
            Cell::S(s) => Value::String(s.clone()),
        }
    }
}

pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.to_string(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width differs from header of `{}`", self.name);
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::csv).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let obj: Map<String, Value> = self.columns.iter().cloned().zip(row.iter().map(Cell::json)).collect();
            let _ = writeln!(out, "{}", Value::Object(obj));
        }
        out
    }
}

/// One point of long-format plot data.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotPoint {
    pub series: String,
    pub x: f64,
    pub y: f64,
    pub y_stderr: Option<f64>,
}

/// Everything a task produces.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub tables: Vec<Table>,
    pub documents: Vec<(String, Value)>,
    pub plot: Vec<PlotPoint>,
}

impl Artifacts {
    pub fn point(&mut self, series: &str, x: f64, y: f64, y_stderr: Option<f64>) {
        self.plot.push(PlotPoint { series: series.to_string(), x, y, y_stderr });
    }

    pub fn document(&mut self, name: &str, value: Value) {
        self.documents.push((name.to_string(), value));
    }
}

pub fn plot_csv(points: &[PlotPoint]) -> String {
    let mut t = Table::new("plot", &["series", "x", "y", "y_stderr"]);
    for p in points {
        t.push(vec![
            Cell::S(p.series.clone()),
            Cell::F(p.x),
            Cell::F(p.y),
            p.y_stderr.map_or(Cell::S(String::new()), Cell::F),
        ]);
    }
    t.to_csv()
}

fn write_file(dir: &Path, name: &str, body: &str, written: &mut Vec<String>) -> Result<(), CliError> {
    fs::write(dir.join(name), body).map_err(|e| CliError::Io(format!("cannot write {name}: {e}")))?;
    written.push(name.to_string());
    Ok(())
}

pub fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}

/// Write the artifacts in the requested formats; returns the file names.
pub fn write_artifacts(dir: &Path, artifacts: &Artifacts, formats: &[Format]) -> Result<Vec<String>, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let mut written = Vec::new();
    for t in &artifacts.tables {
        if formats.contains(&Format::Csv) {
            write_file(dir, &format!("{}.csv", t.name), &t.to_csv(), &mut written)?;
        }
        if formats.contains(&Format::Jsonl) {
            write_file(dir, &format!("{}.jsonl", t.name), &t.to_jsonl(), &mut written)?;
        }
    }
    if formats.contains(&Format::Json) {
        for (name, doc) in &artifacts.documents {
            write_file(dir, &format!("{name}.json"), &pretty(doc), &mut written)?;
        }
    }
    if !artifacts.plot.is_empty() {
        write_file(dir, "plot.csv", &plot_csv(&artifacts.plot), &mut written)?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, 1e-300, 6.02214076e23, -0.0] {
            let s = format_float(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
        assert_eq!(format_float(f64::NAN), "NaN");
    }

    #[test]
    fn csv_quotes_and_jsonl_rows() {
        let mut t = Table::new("x", &["a", "b"]);
        t.push(vec![Cell::S("p,q".into()), Cell::F(0.5)]);
        assert_eq!(t.to_csv(), "a,b\n\"p,q\",5.0000000000000000e-1\n");
        assert_eq!(t.to_jsonl(), "{\"a\":\"p,q\",\"b\":0.5}\n");
    }

    #[test]
    fn plot_data_is_long_format() {
        let p = vec![PlotPoint { series: "s".into(), x: 1.0, y: 2.0, y_stderr: None }];
        let csv = plot_csv(&p);
        assert!(csv.starts_with("series,x,y,y_stderr\n"));
        assert!(csv.ends_with(",\n"));
    }
}
