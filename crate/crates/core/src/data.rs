//! Column-major datasets and the CSV dialect used on disk.
//!
//! Comma separated, header row required, `.` as decimal separator. Missing
//! values (`NA`, empty cells, non-finite numbers) are rejected.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const DEFAULT_RESPONSE: &str = "y";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    /// `cols[j][i]` is feature `j` of sample `i`.
    pub cols: Vec<Vec<f64>>,
    pub y: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, cols: Vec<Vec<f64>>, y: Option<Vec<f64>>) -> Result<Self> {
        if feature_names.len() != cols.len() {
            return Err(Error::invalid("feature names and columns differ in count"));
        }
        let n = cols.first().map(Vec::len).or(y.as_ref().map(Vec::len)).unwrap_or(0);
        if cols.iter().any(|c| c.len() != n) || y.as_ref().is_some_and(|v| v.len() != n) {
            return Err(Error::invalid("columns differ in length"));
        }
        Ok(Self { feature_names, cols, y })
    }

    /// Dataset with generated names `x1..xd`.
    pub fn from_columns(cols: Vec<Vec<f64>>, y: Option<Vec<f64>>) -> Result<Self> {
        let names = (1..=cols.len()).map(|j| format!("x{j}")).collect();
        Self::new(names, cols, y)
    }

    pub fn n(&self) -> usize {
        self.cols
            .first()
            .map(Vec::len)
            .or(self.y.as_ref().map(Vec::len))
            .unwrap_or(0)
    }

    pub fn d(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.cols.iter().map(|c| c[i]).collect()
    }

    pub fn response(&self) -> Result<&[f64]> {
        self.y
            .as_deref()
            .ok_or_else(|| Error::invalid("dataset has no response column"))
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            feature_names: self.feature_names.clone(),
            cols: self.cols.iter().map(|c| idx.iter().map(|&i| c[i]).collect()).collect(),
            y: self.y.as_ref().map(|y| idx.iter().map(|&i| y[i]).collect()),
        }
    }

    pub fn with_response(&self, y: Vec<f64>) -> Result<Self> {
        Self::new(self.feature_names.clone(), self.cols.clone(), Some(y))
    }
}

/// Parse a CSV table. The column named `response` becomes `y`; when
/// `require_response` is false a missing response column is allowed.
pub fn read_csv<R: Read>(reader: R, response: &str, require_response: bool) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: "missing header row".into(),
        });
    }
    let mut seen = std::collections::HashSet::new();
    for (j, h) in headers.iter().enumerate() {
        if h.is_empty() {
            return Err(Error::Parse {
                line: 1,
                column: j as u64 + 1,
                message: "empty column name".into(),
            });
        }
        if !seen.insert(h) {
            return Err(Error::Parse {
                line: 1,
                column: j as u64 + 1,
                message: format!("duplicate column name '{h}'"),
            });
        }
    }
    let resp_idx = headers.iter().position(|h| h == response);
    if resp_idx.is_none() && require_response {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: format!("response column '{response}' not found in header"),
        });
    }
    let feature_idx: Vec<usize> = (0..headers.len()).filter(|&j| Some(j) != resp_idx).collect();
    let feature_names = feature_idx.iter().map(|&j| headers[j].to_string()).collect();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); feature_idx.len()];
    let mut y = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != headers.len() {
            return Err(Error::Parse {
                line,
                column: rec.len().min(headers.len()) as u64 + 1,
                message: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        let cell = |j: usize| -> Result<f64> {
            let s = &rec[j];
            let bad = |message: String| Error::Parse {
                line,
                column: j as u64 + 1,
                message,
            };
            if s.is_empty() || s.eq_ignore_ascii_case("na") {
                return Err(bad(format!("missing value in column '{}'", &headers[j])));
            }
            let v: f64 = s.parse().map_err(|_| bad(format!("'{s}' is not a number")))?;
            if !v.is_finite() {
                return Err(bad(format!("non-finite value '{s}'")));
            }
            Ok(v)
        };
        for (c, &j) in cols.iter_mut().zip(&feature_idx) {
            c.push(cell(j)?);
        }
        if let Some(r) = resp_idx {
            y.push(cell(r)?);
        }
    }
    let n = y.len().max(cols.first().map_or(0, Vec::len));
    if n == 0 {
        return Err(Error::invalid("CSV has no data rows"));
    }
    Dataset::new(feature_names, cols, resp_idx.map(|_| y))
}

fn csv_error(e: csv::Error) -> Error {
    let (line, column) = e.position().map_or((0, 0), |p| (p.line(), 0));
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        csv::ErrorKind::Utf8 { err, .. } => Error::Parse {
            line,
            column: err.field() as u64 + 1,
            message: "invalid UTF-8".into(),
        },
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::Parse {
            line,
            column: len.min(expected_len) + 1,
            message: format!("expected {expected_len} fields, found {len}"),
        },
        other => Error::Parse {
            line,
            column,
            message: format!("{other:?}"),
        },
    }
}

/// Write features then the response (when present) under a header row.
pub fn write_csv<W: Write>(writer: W, data: &Dataset, response: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = data.feature_names.iter().map(String::as_str).collect();
    if data.y.is_some() {
        header.push(response);
    }
    w.write_record(&header).map_err(csv_error)?;
    for i in 0..data.n() {
        let mut rec: Vec<String> = data.cols.iter().map(|c| c[i].to_string()).collect();
        if let Some(y) = &data.y {
            rec.push(y[i].to_string());
        }
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}
