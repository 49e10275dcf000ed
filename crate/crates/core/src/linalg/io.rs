//! Matrix text format: CSV, one row per line, '.'-decimal, no header.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use super::types::Mat;

#[derive(Debug, Error)]
pub enum MatrixIoError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected {expected} fields, found {found}")]
    RaggedRow {
        path: String,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}:{line}: cannot parse '{token}' as a number")]
    BadNumber {
        path: String,
        line: usize,
        token: String,
    },
    #[error("{path}:{line}: non-finite value")]
    NonFinite { path: String, line: usize },
    #[error("{path}: empty matrix")]
    Empty { path: String },
}

pub fn read_matrix(path: &Path) -> Result<Mat, MatrixIoError> {
    let text = std::fs::read_to_string(path).map_err(|source| MatrixIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_matrix_str(&text, &path.display().to_string())
}

pub fn read_matrix_str(text: &str, path: &str) -> Result<Mat, MatrixIoError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for token in line.split(',') {
            let token = token.trim();
            let value: f64 = token.parse().map_err(|_| MatrixIoError::BadNumber {
                path: path.to_string(),
                line: line_no,
                token: token.to_string(),
            })?;
            if !value.is_finite() {
                return Err(MatrixIoError::NonFinite {
                    path: path.to_string(),
                    line: line_no,
                });
            }
            row.push(value);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(MatrixIoError::RaggedRow {
                    path: path.to_string(),
                    line: line_no,
                    expected: first.len(),
                    found: row.len(),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(MatrixIoError::Empty {
            path: path.to_string(),
        });
    }
    let (nr, nc) = (rows.len(), rows[0].len());
    Ok(Mat::from_fn(nr, nc, |r, c| rows[r][c]))
}

/// Serializes with Rust's shortest round-trip float formatting, so
/// write/read is bit-exact and output is deterministic.
pub fn write_matrix_string(m: &Mat) -> String {
    let mut out = String::new();
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if c > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", m[(r, c)]);
        }
        out.push('\n');
    }
    out
}

pub fn write_matrix(path: &Path, m: &Mat) -> Result<(), MatrixIoError> {
    std::fs::write(path, write_matrix_string(m)).map_err(|source| MatrixIoError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let m = Mat::from_row_slice(2, 3, &[1.5, -2.25, 1.0 / 3.0, 0.0, 1e-17, 7.0]);
        let s = write_matrix_string(&m);
        let back = read_matrix_str(&s, "mem").unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn rejects_ragged_rows() {
        let err = read_matrix_str("1,2\n3\n", "mem").unwrap_err();
        assert!(matches!(err, MatrixIoError::RaggedRow { line: 2, .. }));
    }

    #[test]
    fn rejects_bad_tokens() {
        assert!(read_matrix_str("1,abc\n", "mem").is_err());
        assert!(read_matrix_str("1,inf\n", "mem").is_err());
    }
}
