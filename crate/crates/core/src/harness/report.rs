use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::{Backend, Coordination};
use crate::error::{Error, Result};

/// Result of one benchmark run, with the configuration that produced it.
/// Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub backend: Backend,
    pub coordination: Coordination,
    pub workers: usize,
    pub limit: u64,
    pub block_size: u64,
    pub longest: u64,
    pub highest: u64,
    pub reads: u64,
    pub updates: u64,
    pub elapsed_s: f64,
}

pub const CSV_HEADER: &str = "backend,coordination,workers,limit,block_size,longest,highest,reads,updates,elapsed_s";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Text,
    Json,
    Csv,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(OutputFormat::Text),
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            _ => Err(Error::Config(format!("unknown format '{s}' (expected one of: text, json, csv)"))),
        }
    }
}

impl BenchReport {
    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Text => self.to_text(),
            OutputFormat::Json => self.to_json(),
            OutputFormat::Csv => self.to_csv(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let rows: [(&str, String); 10] = [
            ("backend", self.backend.to_string()),
            ("coordination", self.coordination.to_string()),
            ("workers", self.workers.to_string()),
            ("limit", self.limit.to_string()),
            ("block_size", self.block_size.to_string()),
            ("longest", self.longest.to_string()),
            ("highest", self.highest.to_string()),
            ("reads", self.reads.to_string()),
            ("updates", self.updates.to_string()),
            ("elapsed_s", format!("{:.6}", self.elapsed_s)),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k:<13}{v}");
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report fields always serialize") + "\n"
    }

    /// Header plus one row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(self).expect("report fields always serialize");
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv output is utf-8")
    }

    /// Row only, for appending to an existing file.
    pub fn to_csv_row(&self) -> String {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.serialize(self).expect("report fields always serialize");
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv output is utf-8")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("bad report json: {e}")))
    }

    /// Parses every row of a CSV document with a header line.
    pub fn from_csv(s: &str) -> Result<Vec<Self>> {
        csv::Reader::from_reader(s.as_bytes())
            .deserialize()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("bad report csv: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> BenchReport {
        BenchReport {
            backend: Backend::Resp,
            coordination: Coordination::Polling,
            workers: 1,
            limit: 10,
            block_size: 1000,
            longest: 19,
            highest: 52,
            reads: 40,
            updates: 30,
            elapsed_s: 0.25,
        }
    }

    #[test]
    fn csv_header_is_stable() {
        let csv = sample().to_csv();
        assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
        assert_eq!(csv.lines().nth(1).unwrap(), "resp,polling,1,10,1000,19,52,40,30,0.25");
        assert_eq!(sample().to_csv_row(), "resp,polling,1,10,1000,19,52,40,30,0.25\n");
    }

    #[test]
    fn round_trips() {
        let r = sample();
        assert_eq!(BenchReport::from_json(&r.to_json()).unwrap(), r);
        assert_eq!(BenchReport::from_csv(&r.to_csv()).unwrap(), vec![r.clone()]);
        assert!(r.to_text().contains("highest      52"));
    }
}
