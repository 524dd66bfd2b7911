// SPDX-License-Identifier: Apache-2.0
//! CSV ingestion of data matrices and deterministic matrix/table output.
//!
//! Input: comma-separated, one observation per row, an optional single
//! header row (detected when the first row does not parse as numbers).

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::DataMatrix;

/// Reads a numeric matrix; rows must all have the same length.
pub fn read_matrix<R: Read>(reader: R) -> Result<Matrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, record) in rdr.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if idx == 0 => continue, // header row
            Err(e) => {
                return Err(Error::Parse {
                    line,
                    message: e.to_string(),
                })
            }
        };
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {w} fields, found {}", values.len()),
                })
            }
            _ => {}
        }
        rows.push(values);
    }
    let p = width.unwrap_or(0);
    Ok(Matrix::from_fn(rows.len(), p, |i, j| rows[i][j]))
}

pub fn read_data<R: Read>(reader: R) -> Result<DataMatrix> {
    DataMatrix::new(read_matrix(reader)?)
}

pub fn read_data_file(path: impl AsRef<Path>) -> Result<DataMatrix> {
    read_data(std::fs::File::open(path)?)
}

/// Number formatting: 17 significant digits (exact round trip) or a fixed
/// number of decimals for human-readable tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    RoundTrip,
    Decimals(usize),
}

impl Precision {
    pub fn format(self, v: f64) -> String {
        match self {
            Precision::RoundTrip => format!("{v:.16e}"),
            Precision::Decimals(d) => format!("{v:.d$}"),
        }
    }
}

pub fn write_matrix<W: Write>(mut out: W, m: &Matrix, precision: Precision) -> Result<()> {
    for i in 0..m.nrows() {
        let line: Vec<String> = (0..m.ncols()).map(|j| precision.format(m[(i, j)])).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_skipped() {
        let m = read_matrix("a,b\n1,2\n3.5,-4e-1\n".as_bytes()).unwrap();
        assert_eq!(m, Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.5, -0.4]));
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let err = read_matrix("1,2\n3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn garbage_after_first_row_is_rejected() {
        assert!(read_matrix("1,2\nx,3\n".as_bytes()).is_err());
    }

    #[test]
    fn round_trip_is_exact() {
        let m = Matrix::from_row_slice(2, 2, &[0.1, 1.0 / 3.0, -2.5e-300, 123456.789]);
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m, Precision::RoundTrip).unwrap();
        let back = read_matrix(buf.as_slice()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn decimals() {
        assert_eq!(Precision::Decimals(2).format(0.4797), "0.48");
    }
}
