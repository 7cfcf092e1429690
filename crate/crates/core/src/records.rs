//! Result tables as CSV or JSON, with a fixed column order.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{BenchRow, ResultRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResultFormat {
    Csv,
    #[default]
    Json,
}

impl ResultFormat {
    /// `csv` for a `.csv` extension, JSON otherwise.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => ResultFormat::Csv,
            _ => ResultFormat::Json,
        }
    }
}

impl FromStr for ResultFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ResultFormat::Csv),
            "json" => Ok(ResultFormat::Json),
            _ => Err(Error::Config(format!("unknown result format {s:?} (expected csv or json)"))),
        }
    }
}

impl fmt::Display for ResultFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResultFormat::Csv => "csv",
            ResultFormat::Json => "json",
        })
    }
}

#[derive(Serialize)]
struct TableRef<'a, T> {
    rows: &'a [T],
}

#[derive(Deserialize)]
struct Table<T> {
    rows: Vec<T>,
}

fn write_table<T: Serialize>(rows: &[T], columns: &[&str], path: &Path, format: ResultFormat) -> Result<()> {
    match format {
        ResultFormat::Json => {
            let text = serde_json::to_string_pretty(&TableRef { rows }).map_err(|e| Error::format(path, e))?;
            std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
        }
        ResultFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_path(path)
                .map_err(|e| Error::format(path, e))?;
            w.write_record(columns).map_err(|e| Error::format(path, e))?;
            for r in rows {
                w.serialize(r).map_err(|e| Error::format(path, e))?;
            }
            w.flush().map_err(|e| Error::io(path, e))
        }
    }
}

fn read_table<T: DeserializeOwned>(columns: &[&str], path: &Path, format: ResultFormat) -> Result<Vec<T>> {
    match format {
        ResultFormat::Json => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let t: Table<T> = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
            Ok(t.rows)
        }
        ResultFormat::Csv => {
            let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
            let mut r = csv::Reader::from_reader(file);
            let header = r.headers().map_err(|e| Error::format(path, e))?;
            if header.iter().ne(columns.iter().copied()) {
                return Err(Error::format(path, format!("expected columns {}", columns.join(","))));
            }
            r.deserialize()
                .map(|row| row.map_err(|e| Error::format(path, e)))
                .collect()
        }
    }
}

pub fn emit_results(records: &[ResultRecord], path: &Path, format: ResultFormat) -> Result<()> {
    write_table(records, &ResultRecord::COLUMNS, path, format)
}

pub fn load_results(path: &Path, format: ResultFormat) -> Result<Vec<ResultRecord>> {
    read_table(&ResultRecord::COLUMNS, path, format)
}

pub fn emit_bench(rows: &[BenchRow], path: &Path, format: ResultFormat) -> Result<()> {
    write_table(rows, &BenchRow::COLUMNS, path, format)
}

pub fn load_bench(path: &Path, format: ResultFormat) -> Result<Vec<BenchRow>> {
    read_table(&BenchRow::COLUMNS, path, format)
}
