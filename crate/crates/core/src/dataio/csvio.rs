//! CSV layout: header `series_id,t,<feature>,...`, one row per series and
//! step, sorted by `(series_id, t)`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SeriesDataset;
use crate::error::{Error, Result};

/// How to cut a file into sequences.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Feature columns to keep, in order; all of them when `None`.
    pub targets: Option<Vec<String>>,
    /// Sequence length; whole series (which must then share one length)
    /// when `None`.
    pub window: Option<usize>,
    /// Offset between window starts; defaults to the window length.
    pub stride: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows_read: usize,
    /// Rows skipped because a feature cell was empty or `NA`.
    pub rows_dropped: usize,
    pub series: usize,
    pub windows: usize,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "NaN" | "nan")
}

fn parse_err(line: u64, column: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column: column.to_string(),
        message: message.into(),
    }
}

/// Reads and windows a series file from any reader.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<(SeriesDataset, LoadReport)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| parse_err(1, "header", e.to_string()))?
        .clone();
    if header.len() < 3 || &header[0] != "series_id" || &header[1] != "t" {
        return Err(parse_err(1, "header", "expected `series_id,t,<feature>,...`"));
    }
    let features: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let width = header.len();

    let mut report = LoadReport::default();
    let mut series: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    let mut last_t: Option<i64> = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, "row", e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        report.rows_read += 1;
        if rec.len() != width {
            return Err(Error::Schema(format!(
                "line {line} has {} fields, header has {width}",
                rec.len()
            )));
        }
        let id = rec[0].to_string();
        let t: i64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, "t", format!("{:?} is not an integer", &rec[1])))?;
        let mut row = Vec::with_capacity(features.len());
        let mut missing = false;
        for (j, cell) in rec.iter().skip(2).enumerate() {
            if is_missing(cell) {
                missing = true;
                continue;
            }
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(line, &features[j], format!("{cell:?} is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line, &features[j], "non-finite value"));
            }
            row.push(v);
        }
        let new_series = series.last().is_none_or(|(last, _)| *last != id);
        if new_series {
            if series.iter().any(|(s, _)| *s == id) {
                return Err(parse_err(
                    line,
                    "series_id",
                    format!("rows of series {id:?} are not contiguous"),
                ));
            }
            series.push((id, Vec::new()));
        } else if last_t.is_some_and(|prev| t <= prev) {
            return Err(parse_err(line, "t", "rows must be sorted by t within a series"));
        }
        last_t = Some(t);
        if missing {
            report.rows_dropped += 1;
            continue;
        }
        series.last_mut().expect("series pushed above").1.push(row);
    }
    if series.is_empty() {
        return Err(Error::Schema("file has no data rows".into()));
    }
    report.series = series.len();

    let (ids, data) = match schema.window {
        None => series.into_iter().unzip(),
        Some(len) => {
            if len < 2 {
                return Err(Error::domain("window length must be >= 2"));
            }
            let stride = schema.stride.unwrap_or(len);
            if stride == 0 {
                return Err(Error::domain("window stride must be >= 1"));
            }
            let mut ids = Vec::new();
            let mut data = Vec::new();
            for (id, rows) in series {
                let mut start = 0;
                while start + len <= rows.len() {
                    ids.push(format!("{id}#{}", start / stride));
                    data.push(rows[start..start + len].to_vec());
                    start += stride;
                }
            }
            if data.is_empty() {
                return Err(Error::Schema(format!("no series is long enough for windows of {len}")));
            }
            (ids, data)
        }
    };
    report.windows = data.len();
    let mut ds = SeriesDataset::new(ids, features, data)?;
    if let Some(targets) = &schema.targets {
        ds.select_features(targets)?;
    }
    Ok((ds, report))
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<(SeriesDataset, LoadReport)> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(f), schema)
}

/// Writes the dataset in the ingestion layout, `t` counting from 1, values
/// on the dataset's current scale.
pub fn write_csv<W: Write>(dataset: &SeriesDataset, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    let mut header = vec!["series_id".to_string(), "t".to_string()];
    header.extend(dataset.features.iter().cloned());
    wtr.write_record(&header).map_err(fmt)?;
    for (id, s) in dataset.ids.iter().zip(&dataset.data) {
        for (t, x) in s.iter().enumerate() {
            let mut rec = vec![id.clone(), (t + 1).to_string()];
            rec.extend(x.iter().map(|v| v.to_string()));
            wtr.write_record(&rec).map_err(fmt)?;
        }
    }
    wtr.flush().map_err(|e| Error::Format(e.to_string()))
}
