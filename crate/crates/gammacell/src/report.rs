//! Tabular experiment reports and their CSV/JSON forms.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cache::write_atomic;
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 10] = [
    "experiment",
    "X",
    "delta",
    "k",
    "res",
    "kind",
    "value",
    "converged",
    "wall_time_s",
    "seed",
];

/// Crate version stamped into report metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub experiment: String,
    /// Row-major entries of the macroscopic gradient (empty when the row has
    /// none).
    #[serde(rename = "X")]
    pub x: Vec<f64>,
    #[serde(with = "nan_null")]
    pub delta: f64,
    pub k: usize,
    pub res: usize,
    pub kind: String,
    #[serde(with = "nan_null")]
    pub value: f64,
    pub converged: bool,
    #[serde(with = "nan_null")]
    pub wall_time_s: f64,
    pub seed: u64,
}

impl Row {
    pub fn new(experiment: impl Into<String>, kind: impl Into<String>, value: f64) -> Self {
        Row {
            experiment: experiment.into(),
            x: Vec::new(),
            delta: 0.0,
            k: 0,
            res: 0,
            kind: kind.into(),
            value,
            converged: true,
            wall_time_s: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
    pub command: String,
}

/// A named pass/fail flag computed by an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub metadata: Metadata,
    pub rows: Vec<Row>,
    #[serde(default)]
    pub checks: Vec<Check>,
}

impl Report {
    pub fn new(metadata: Metadata) -> Self {
        Report {
            metadata,
            rows: Vec::new(),
            checks: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Row) {
        self.rows.push(row);
    }

    pub fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn all_checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn rows_of<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a Row> + 'a {
        self.rows.iter().filter(move |r| r.kind == kind)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        for r in &self.rows {
            let x = r.x.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(";");
            w.write_record([
                r.experiment.clone(),
                x,
                format!("{:?}", r.delta),
                r.k.to_string(),
                r.res.to_string(),
                r.kind.clone(),
                format!("{:?}", r.value),
                r.converged.to_string(),
                format!("{:?}", r.wall_time_s),
                r.seed.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Report(e.to_string()))
    }

    pub fn write(&self, format: &str, path: &Path) -> Result<()> {
        let text = match format {
            "csv" => self.to_csv(),
            "json" => self.to_json(),
            other => return Err(Error::config(format!("unknown report format {other:?}"))),
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        write_atomic(path, text.as_bytes())
    }
}

/// Parses rows written by [`Report::to_csv`].
pub fn rows_from_csv(text: &str) -> Result<Vec<Row>> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header = rd.headers().map_err(|e| Error::Report(e.to_string()))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Report(format!("unexpected header {header:?}")));
    }
    let bad = |what: &str, v: &str| Error::Report(format!("bad {what} {v:?}"));
    let float = |what: &str, v: &str| v.parse::<f64>().map_err(|_| bad(what, v));
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| Error::Report(e.to_string()))?;
        let x = if rec[1].is_empty() {
            Vec::new()
        } else {
            rec[1].split(';').map(|v| float("X", v)).collect::<Result<_>>()?
        };
        rows.push(Row {
            experiment: rec[0].to_string(),
            x,
            delta: float("delta", &rec[2])?,
            k: rec[3].parse().map_err(|_| bad("k", &rec[3]))?,
            res: rec[4].parse().map_err(|_| bad("res", &rec[4]))?,
            kind: rec[5].to_string(),
            value: float("value", &rec[6])?,
            converged: rec[7].parse().map_err(|_| bad("converged", &rec[7]))?,
            wall_time_s: float("wall_time_s", &rec[8])?,
            seed: rec[9].parse().map_err(|_| bad("seed", &rec[9]))?,
        });
    }
    Ok(rows)
}

/// Non-finite floats become `null` in JSON and come back as NaN.
mod nan_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> Metadata {
        Metadata {
            config_hash: "abc".into(),
            version: VERSION.into(),
            seed: 7,
            command: "cell".into(),
        }
    }

    #[test]
    fn empty_csv_is_header_only() {
        let r = Report::new(meta());
        assert_eq!(r.to_csv(), format!("{}\n", CSV_HEADER.join(",")));
        assert!(rows_from_csv(&r.to_csv()).unwrap().is_empty());
    }

    #[test]
    fn one_row_round_trips() {
        let mut r = Report::new(meta());
        let mut row = Row::new("cell", "cell_energy", 0.1 + 0.2);
        row.x = vec![1.0, -0.0, 1e-300, 2.0 / 3.0];
        row.delta = 0.05;
        row.k = 2;
        row.res = 16;
        row.converged = false;
        row.seed = u64::MAX;
        r.push(row.clone());
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(rows_from_csv(&csv).unwrap(), vec![row]);
        assert_eq!(Report::from_json(&r.to_json()).unwrap(), r);
    }
}
