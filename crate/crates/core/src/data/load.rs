use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, ReactionRecord, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Jsonl,
    Csv,
}

impl DataFormat {
    /// Guesses from the file extension (`.csv`, otherwise JSONL).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::Jsonl,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadMode {
    /// Abort on the first malformed row.
    Strict,
    /// Collect malformed rows and keep going.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowError {
    /// 1-based line number in the source file.
    pub row: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Loaded {
    pub records: Vec<ReactionRecord>,
    pub errors: Vec<RowError>,
}

pub const CSV_COLUMNS: [&str; 6] = ["id", "reactants", "reagents", "products", "yield", "class_label"];

pub fn load_dataset(path: &Path, format: DataFormat, mode: LoadMode) -> Result<Loaded> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_dataset(BufReader::new(file), format, mode).map_err(|e| match e {
        DataError::Io { source, .. } => DataError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}

pub fn read_dataset<R: Read>(reader: R, format: DataFormat, mode: LoadMode) -> Result<Loaded> {
    let mut out = Loaded::default();
    let mut push = |row: usize, parsed: std::result::Result<ReactionRecord, String>| -> Result<()> {
        match parsed.and_then(|r| r.validate().map(|_| r)) {
            Ok(r) => out.records.push(r),
            Err(message) if mode == LoadMode::Strict => return Err(DataError::Row { row, message }),
            Err(message) => out.errors.push(RowError { row, message }),
        }
        Ok(())
    };
    match format {
        DataFormat::Jsonl => {
            for (i, line) in BufReader::new(reader).lines().enumerate() {
                let line = line.map_err(|source| DataError::Io {
                    path: String::new(),
                    source,
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                push(i + 1, serde_json::from_str(&line).map_err(|e| e.to_string()))?;
            }
        }
        DataFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
            let headers = rdr.headers().map_err(|e| DataError::Schema(e.to_string()))?.clone();
            let cols: Vec<&str> = headers.iter().map(str::trim).collect();
            if cols != CSV_COLUMNS {
                return Err(DataError::Schema(format!(
                    "expected columns {}, found {}",
                    CSV_COLUMNS.join(","),
                    cols.join(",")
                )));
            }
            for rec in rdr.records() {
                let rec = match rec {
                    Ok(r) => r,
                    Err(e) => {
                        let row = e.position().map_or(0, |p| p.line() as usize);
                        push(row, Err(e.to_string()))?;
                        continue;
                    }
                };
                let row = rec.position().map_or(0, |p| p.line() as usize);
                push(row, csv_record(&rec))?;
            }
        }
    }
    Ok(out)
}

fn csv_record(rec: &csv::StringRecord) -> std::result::Result<ReactionRecord, String> {
    if rec.len() != CSV_COLUMNS.len() {
        return Err(format!("expected {} fields, found {}", CSV_COLUMNS.len(), rec.len()));
    }
    let list = |s: &str| -> Vec<String> {
        s.split(';')
            .map(str::trim)
            .filter(|x| !x.is_empty())
            .map(String::from)
            .collect()
    };
    let yield_fraction = match rec[4].trim() {
        "" => None,
        y => Some(y.parse::<f64>().map_err(|e| format!("yield {y:?}: {e}"))?),
    };
    let class_label = Some(rec[5].trim()).filter(|s| !s.is_empty()).map(String::from);
    Ok(ReactionRecord {
        id: rec[0].trim().to_string(),
        reactants: list(&rec[1]),
        reagents: list(&rec[2]),
        products: list(&rec[3]),
        yield_fraction,
        class_label,
    })
}
