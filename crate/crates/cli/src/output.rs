//! CSV and JSON emission.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::config::Format;
use crate::run::{ResultRow, COLUMNS};

/// Prefix of the optional timestamp line at the top of a CSV file.
pub const TIMESTAMP_PREFIX: &str = "# generated ";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JsonDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated: Option<String>,
    pub rows: Vec<ResultRow>,
}

pub fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

/// Generic table with the result-row CSV dialect.
pub fn write_table<W: Write>(mut out: W, header: &[&str], records: &[Vec<String>], stamp: Option<&str>) -> io::Result<()> {
    if let Some(s) = stamp {
        writeln!(out, "{TIMESTAMP_PREFIX}{s}")?;
    }
    let mut w = csv_writer(out);
    w.write_record(header)?;
    for r in records {
        w.write_record(r)?;
    }
    w.flush()
}

pub fn write_rows<W: Write>(mut out: W, rows: &[ResultRow], format: Format, stamp: Option<&str>) -> io::Result<()> {
    match format {
        Format::Csv => {
            let records: Vec<Vec<String>> = rows.iter().map(ResultRow::fields).collect();
            write_table(out, &COLUMNS, &records, stamp)
        }
        Format::Json => {
            let doc = JsonDocument {
                generated: stamp.map(str::to_string),
                rows: rows.to_vec(),
            };
            serde_json::to_writer_pretty(&mut out, &doc)?;
            writeln!(out)
        }
    }
}

/// Parses rows back from CSV output, skipping the timestamp line.
pub fn read_csv_rows<R: io::Read>(input: R) -> Result<Vec<ResultRow>, csv::Error> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input)
        .deserialize()
        .collect()
}

pub fn read_json_rows(text: &str) -> Result<Vec<ResultRow>, serde_json::Error> {
    serde_json::from_str::<JsonDocument>(text).map(|d| d.rows)
}
