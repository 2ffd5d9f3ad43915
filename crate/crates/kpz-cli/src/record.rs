//! Result records and their CSV/JSON encodings.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use kpz_stationary::measure::QuadratureSpec;
use serde::Serialize;
use serde_json::Value;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// One table cell.
#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}
impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}
impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::Int(x as i64)
    }
}
impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Text(x.to_string())
    }
}
impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_string())
    }
}
impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::Text(x)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QuadratureEcho {
    pub panels: usize,
    pub nodes_per_panel: usize,
    pub cutoff: f64,
    pub rel_tol: f64,
}

impl From<&QuadratureSpec> for QuadratureEcho {
    fn from(s: &QuadratureSpec) -> Self {
        QuadratureEcho { panels: s.panels, nodes_per_panel: s.nodes_per_panel, cutoff: s.cutoff, rel_tol: s.rel_tol }
    }
}

/// Everything a subcommand reports.
#[derive(Debug, Clone, Serialize)]
pub struct ResultRecord {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub inputs: BTreeMap<String, Value>,
    pub quadrature: Option<QuadratureEcho>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// Scalar outputs, each paired with its tolerance or standard error
    /// under a `*_tol` / `*_std_error` key.
    pub summary: BTreeMap<String, f64>,
    pub residuals: BTreeMap<String, f64>,
    pub passed: Option<bool>,
    pub wall_time_s: f64,
}

impl ResultRecord {
    pub fn new(command: &str, columns: &[&str]) -> Self {
        ResultRecord {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: None,
            inputs: BTreeMap::new(),
            quadrature: None,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            summary: BTreeMap::new(),
            residuals: BTreeMap::new(),
            passed: None,
            wall_time_s: 0.0,
        }
    }

    pub fn input(&mut self, key: &str, value: impl Serialize) -> &mut Self {
        self.inputs.insert(key.to_string(), serde_json::to_value(value).expect("serialisable input"));
        self
    }

    pub fn row(&mut self, cells: Vec<Cell>) {
        debug_assert_eq!(cells.len(), self.columns.len());
        self.rows.push(cells);
    }

    pub fn quadrature(&mut self, spec: &QuadratureSpec) {
        self.quadrature = Some(spec.into());
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serialisable record") + "\n"
    }

    /// CSV table with `#`-prefixed metadata lines. Timing is left out so that
    /// identical runs give identical files.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# command: {}\n# version: {}\n", self.command, self.version));
        if let Some(seed) = self.seed {
            out.push_str(&format!("# seed: {seed}\n"));
        }
        out.push_str(&format!("# inputs: {}\n", serde_json::to_string(&self.inputs).expect("json")));
        if let Some(q) = &self.quadrature {
            out.push_str(&format!("# quadrature: {}\n", serde_json::to_string(q).expect("json")));
        }
        for (k, v) in &self.summary {
            out.push_str(&format!("# summary {k}: {}\n", fmt_num(*v)));
        }
        for (k, v) in &self.residuals {
            out.push_str(&format!("# residual {k}: {}\n", fmt_num(*v)));
        }
        if let Some(p) = self.passed {
            out.push_str(&format!("# passed: {p}\n"));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r.iter().map(|c| match c {
                Cell::Num(x) => fmt_num(*x),
                Cell::Int(i) => i.to_string(),
                Cell::Text(t) => t.clone(),
            }))
            .expect("in-memory write");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("utf8"));
        out
    }

    pub fn emit(&self, format: Format, out: Option<&Path>) -> Result<(), CliError> {
        let text = match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        };
        match out {
            Some(p) => {
                std::fs::write(p, text).map_err(|e| CliError::Config(format!("cannot write {}: {e}", p.display())))
            }
            None => std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| CliError::Config(format!("cannot write to stdout: {e}"))),
        }
    }
}

/// 17 significant digits.
pub fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

#[cfg(test)]
mod record_works {
    use super::*;

    #[test]
    fn csv_has_metadata_and_no_timing() {
        let mut r = ResultRecord::new("t", &["a", "b"]);
        r.input("u", 1.5);
        r.row(vec![1usize.into(), 0.25.into()]);
        r.summary.insert("s".into(), 2.0);
        r.wall_time_s = 3.0;
        let csv = r.to_csv();
        assert!(csv.contains("# inputs: {\"u\":1.5}"));
        assert!(csv.contains("# summary s: 2.0000000000000000e0"));
        assert!(!csv.contains("wall"));
        assert!(csv.ends_with("a,b\n1,2.5000000000000000e-1\n"));
    }

    #[test]
    fn json_round_trips_numbers() {
        let mut r = ResultRecord::new("t", &["x"]);
        r.row(vec![0.1.into()]);
        let v: Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["rows"][0][0].as_f64(), Some(0.1));
        assert_eq!(v["seed"], Value::Null);
    }

    #[test]
    fn non_finite_numbers_are_spelled_out() {
        assert_eq!(fmt_num(f64::INFINITY), "inf");
        assert_eq!(fmt_num(f64::NAN), "NaN");
    }
}
