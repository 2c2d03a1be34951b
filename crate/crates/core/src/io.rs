//! CSV datasets and report serialization.
//!
//! Datasets are comma-separated with a header row `y,x1,...,x{k-1}`; the
//! intercept column is added on read. Reports are written as JSON or as CSV
//! with a leading `#` line carrying the metadata as JSON.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CusumError, Result};
use crate::harness::{Cell, ExperimentReport, Metadata, REPORT_SCHEMA_VERSION};
use crate::limit_sim::{CriticalValueTable, Curve};
use crate::regression::Dataset;

/// Reads a dataset from CSV text.
pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let width = match rdr.headers() {
        Ok(h) if h.iter().any(|f| !f.is_empty()) => h.len(),
        Ok(_) => return Err(CusumError::EmptyDataset),
        Err(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => return Err(e.into()),
        Err(_) => return Err(CusumError::EmptyDataset),
    };
    let mut y = Vec::new();
    let mut x = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != width {
            return Err(CusumError::DimensionMismatch { expected: width, got: rec.len() });
        }
        let vals = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| CusumError::Parse(format!("row {}: '{f}' is not a number", i + 1))))
            .collect::<Result<Vec<_>>>()?;
        y.push(vals[0]);
        x.push(1.0);
        x.extend_from_slice(&vals[1..]);
    }
    if y.is_empty() {
        return Err(CusumError::EmptyDataset);
    }
    Dataset::new(y, x, width)
}

pub fn read_dataset_file(path: &Path) -> Result<Dataset> {
    read_dataset(std::fs::File::open(path)?)
}

/// Writes `data` in the format [`read_dataset`] accepts.
pub fn write_dataset<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["y".to_string()];
    header.extend((1..data.k()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for (row, y) in data.rows() {
        let mut rec = vec![y.to_string()];
        rec.extend(row[1..].iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses one streamed observation `y,x1,...,x{k-1}`; returns the full
/// regressor row including the intercept. Blank lines and a header line
/// starting with `y` yield `None`.
pub fn parse_observation(line: &str, k: usize) -> Result<Option<(Vec<f64>, f64)>> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('y') || line.starts_with('#') {
        return Ok(None);
    }
    let vals = line
        .split(',')
        .map(|f| f.trim().parse::<f64>().map_err(|_| CusumError::Parse(format!("'{}' is not a number", f.trim()))))
        .collect::<Result<Vec<_>>>()?;
    if vals.len() != k {
        return Err(CusumError::DimensionMismatch { expected: k, got: vals.len() });
    }
    let mut x = Vec::with_capacity(k);
    x.push(1.0);
    x.extend_from_slice(&vals[1..]);
    Ok(Some((x, vals[0])))
}

/// Reads an `l × k` or `k × l` whitespace- or comma-separated matrix; returns
/// it as `k × l`.
pub fn read_matrix<R: BufRead>(reader: R, k: usize) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        rows.push(
            line.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|f| !f.is_empty())
                .map(|f| f.parse::<f64>().map_err(|_| CusumError::Parse(format!("'{f}' is not a number"))))
                .collect::<Result<_>>()?,
        );
    }
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || rows.iter().any(|r| r.len() != cols) {
        return Err(CusumError::Parse("matrix rows must be non-empty and of equal length".into()));
    }
    let m = DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]);
    match (m.nrows() == k, m.ncols() == k) {
        (true, _) => Ok(m),
        (false, true) => Ok(m.transpose()),
        _ => Err(CusumError::DimensionMismatch { expected: k, got: m.nrows() }),
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

pub fn from_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    Ok(serde_json::from_str(text)?)
}

/// Parses a JSON report and checks its schema version.
pub fn report_from_json(text: &str) -> Result<ExperimentReport> {
    let report: ExperimentReport = from_json(text)?;
    check_version(report.schema_version)?;
    Ok(report)
}

fn check_version(found: u32) -> Result<()> {
    if found != REPORT_SCHEMA_VERSION {
        return Err(CusumError::SchemaVersion { found, expected: REPORT_SCHEMA_VERSION });
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ReportHeader {
    schema_version: u32,
    table: String,
    title: String,
    metadata: Metadata,
}

/// CSV form of a report: `# {header json}` then `row,column,estimate,std_error`.
pub fn report_to_csv(report: &ExperimentReport) -> Result<String> {
    let header = ReportHeader {
        schema_version: report.schema_version,
        table: report.table.clone(),
        title: report.title.clone(),
        metadata: report.metadata.clone(),
    };
    let mut out = format!("# {}\n", serde_json::to_string(&header)?);
    let mut w = csv::Writer::from_writer(Vec::new());
    if report.cells.is_empty() {
        w.write_record(["row", "column", "estimate", "std_error"])?;
    }
    for c in &report.cells {
        w.serialize(c)?;
    }
    out.push_str(&String::from_utf8(w.into_inner().map_err(|e| CusumError::Io(e.to_string()))?).expect("csv is utf-8"));
    Ok(out)
}

pub fn report_from_csv(text: &str) -> Result<ExperimentReport> {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let json = first.strip_prefix('#').ok_or_else(|| CusumError::Parse("missing report header line".into()))?;
    let header: ReportHeader = serde_json::from_str(json.trim())?;
    check_version(header.schema_version)?;
    let mut rdr = csv::Reader::from_reader(rest.as_bytes());
    let cells = rdr.deserialize::<Cell>().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(ExperimentReport {
        schema_version: header.schema_version,
        table: header.table,
        title: header.title,
        metadata: header.metadata,
        cells,
    })
}

/// Long-format CSV `label,x,y` of plot-ready curves.
pub fn curves_to_csv(curves: &[Curve]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["label", "x", "y"])?;
    for c in curves {
        for (x, y) in &c.points {
            w.write_record([c.label.clone(), x.to_string(), y.to_string()])?;
        }
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| CusumError::Io(e.to_string()))?).expect("csv is utf-8"))
}

/// CSV `kind,nu,alpha,boundary,horizon,lambda` of a critical-value table.
pub fn critical_values_to_csv(table: &CriticalValueTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["kind", "nu", "alpha", "boundary", "horizon", "lambda"])?;
    for e in &table.entries {
        let shape = serde_json::to_string(&e.boundary)?;
        w.write_record([
            e.kind.to_string(),
            e.nu.to_string(),
            e.alpha.to_string(),
            shape,
            e.horizon.to_string(),
            e.lambda.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| CusumError::Io(e.to_string()))?).expect("csv is utf-8"))
}
