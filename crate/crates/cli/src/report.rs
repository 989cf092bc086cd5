use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::error::CliError;

/// Shortest decimal string that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// One pass/fail check of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Criterion {
    pub name: String,
    pub passed: bool,
    pub value: Option<f64>,
    pub tolerance: Option<f64>,
}

impl Criterion {
    pub fn flag(name: impl Into<String>, passed: bool) -> Self {
        Self { name: name.into(), passed, value: None, tolerance: None }
    }

    /// `|value - target| <= tol`.
    pub fn near(name: impl Into<String>, value: f64, target: f64, tol: f64) -> Self {
        Self { name: name.into(), passed: (value - target).abs() <= tol, value: Some(value), tolerance: Some(tol) }
    }

    /// `value <= bound`.
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { name: name.into(), passed: value <= bound, value: Some(value), tolerance: Some(bound) }
    }

    /// `value >= bound`.
    pub fn at_least(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { name: name.into(), passed: value >= bound, value: Some(value), tolerance: Some(bound) }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self { header: header.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

/// Everything a run produces before it is written out.
#[derive(Debug, Clone)]
pub struct Report {
    pub experiment: &'static str,
    pub table: Table,
    pub results: Value,
    pub criteria: Vec<Criterion>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }

    pub fn summary(&self, config: &ExperimentConfig, wall_time: Option<f64>) -> Value {
        let mut v = json!({
            "experiment": self.experiment,
            "config": config,
            "git_describe": env!("FLOWREG_GIT_DESCRIBE"),
            "criteria": self.criteria,
            "results": self.results,
            "pass": self.passed(),
        });
        if let Some(w) = wall_time {
            v["wall_time_s"] = json!(w);
        }
        v
    }

    /// Writes `<dir>/<experiment>.csv` and `<dir>/<experiment>.summary.json`.
    pub fn write(&self, dir: &Path, config: &ExperimentConfig, wall_time: Option<f64>) -> Result<(PathBuf, PathBuf), CliError> {
        std::fs::create_dir_all(dir)?;
        let csv = dir.join(format!("{}.csv", self.experiment));
        let summary = dir.join(format!("{}.summary.json", self.experiment));
        std::fs::write(&csv, self.table.to_csv())?;
        let mut text = serde_json::to_string_pretty(&self.summary(config, wall_time)).map_err(|e| CliError::NumericalFailure(e.to_string()))?;
        text.push('\n');
        std::fs::write(&summary, text)?;
        Ok((csv, summary))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 6.02e23, -0.0, 2.0] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
        assert_eq!(fmt_f64(0.1), "0.1");
    }

    #[test]
    fn csv_layout() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["1".into(), fmt_f64(0.5)]);
        assert_eq!(t.to_csv(), "a,b\n1,0.5\n");
    }

    #[test]
    fn criteria_helpers() {
        assert!(Criterion::near("x", 1.0, 1.05, 0.1).passed);
        assert!(!Criterion::near("x", 1.0, 1.05, 0.0).passed);
        assert!(!Criterion::at_most("x", f64::NAN, 1.0).passed);
        assert!(Criterion::at_least("x", 2.0, 1.0).passed);
    }
}
