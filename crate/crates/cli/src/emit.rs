//! CSV and report writers.
//!
//! Numbers are written with 17 significant digits so that every double
//! round-trips; lines end in `\n`.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

/// `v` with 17 significant digits.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".to_owned()
    } else if v > 0.0 {
        "inf".to_owned()
    } else {
        "-inf".to_owned()
    }
}

/// A CSV file built in memory and written at once.
pub struct Csv {
    buf: String,
    columns: usize,
}

pub enum Cell<'a> {
    Num(f64),
    Int(u64),
    Text(&'a str),
    Bool(bool),
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut buf = header.join(",");
        buf.push('\n');
        Self {
            buf,
            columns: header.len(),
        }
    }

    pub fn row(&mut self, cells: &[Cell<'_>]) {
        debug_assert_eq!(cells.len(), self.columns);
        for (i, c) in cells.iter().enumerate() {
            if i > 0 {
                self.buf.push(',');
            }
            match c {
                Cell::Num(v) => self.buf.push_str(&num(*v)),
                Cell::Int(v) => write!(self.buf, "{v}").unwrap(),
                Cell::Text(s) => self.buf.push_str(s),
                Cell::Bool(b) => self.buf.push_str(if *b { "true" } else { "false" }),
            }
        }
        self.buf.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.buf
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        fs::write(path, &self.buf)
    }
}

/// Deterministic summary of one command run. Wall time is not part of it.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: &'static str,
    pub schema: &'static str,
    pub spec_digest: String,
    pub seed: u64,
    pub outputs: Vec<String>,
    pub metrics: Map<String, Value>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<String>,
}

impl RunReport {
    pub fn new(command: &'static str, spec_digest: String, seed: u64) -> Self {
        Self {
            command,
            schema: crate::spec::SCHEMA,
            spec_digest,
            seed,
            outputs: Vec::new(),
            metrics: Map::new(),
            failures: Vec::new(),
        }
    }

    pub fn metric(&mut self, name: &str, value: impl Into<Value>) {
        self.metrics.insert(name.to_owned(), value.into());
    }

    /// Writes `csv` to `dir/name` and records it.
    pub fn emit(&mut self, dir: &Path, name: &str, csv: &Csv) -> io::Result<()> {
        csv.write(&dir.join(name))?;
        self.outputs.push(name.to_owned());
        Ok(())
    }

    pub fn write(&mut self, dir: &Path) -> io::Result<PathBuf> {
        self.outputs.push("report.json".to_owned());
        let path = dir.join("report.json");
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }
}

/// Non-finite values become JSON `null`.
pub fn json_num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 12345.678, 0.0] {
            let s = num(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-').replace('.', "");
            assert_eq!(mantissa.len(), 17, "{s}");
        }
        assert_eq!(num(f64::INFINITY), "inf");
    }

    #[test]
    fn csv_layout() {
        let mut c = Csv::new(&["t", "x", "ok"]);
        c.row(&[Cell::Num(0.5), Cell::Int(3), Cell::Bool(true)]);
        assert_eq!(c.as_str(), "t,x,ok\n5.0000000000000000e-1,3,true\n");
    }
}
