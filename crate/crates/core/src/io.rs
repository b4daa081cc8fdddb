//! Text matrix format, CSV columns and atomic file output.
//!
//! Matrix files start with a `<rows> <cols>` line followed by `rows` lines of
//! `cols` whitespace-separated floats. Lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use tempfile::NamedTempFile;

use crate::error::{Error, Result};

pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .enumerate()
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hline, header) = lines.next().ok_or_else(|| Error::Parse("empty matrix file".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Parse(format!("line {}: bad header: {e}", hline + 1)))?;
    let [rows, cols] = dims[..] else {
        return Err(Error::Parse(format!("line {}: header must be '<rows> <cols>'", hline + 1)));
    };
    if rows == 0 || cols == 0 {
        return Err(Error::Parse("matrix dimensions must be positive".into()));
    }
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (no, line) in lines {
        if seen == rows {
            return Err(Error::Parse(format!("line {}: more than {rows} rows", no + 1)));
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: '{tok}' is not a number", no + 1)))?;
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(Error::Parse(format!(
                "line {}: expected {cols} values, found {}",
                no + 1,
                data.len() - before
            )));
        }
        seen += 1;
    }
    if seen != rows {
        return Err(Error::Parse(format!("expected {rows} rows, found {seen}")));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut out = format!("{} {}\n", m.nrows(), m.ncols());
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    parse_matrix(&std::fs::read_to_string(path)?)
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_atomic(path, format_matrix(m).as_bytes())
}

/// First column of a CSV file with a header row.
pub fn read_csv_column(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(csv_error)?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let field = rec
            .get(0)
            .ok_or_else(|| Error::Parse(format!("record {}: empty", i + 1)))?
            .trim();
        out.push(
            field
                .parse()
                .map_err(|_| Error::Parse(format!("record {}: '{field}' is not a number", i + 1)))?,
        );
    }
    Ok(out)
}

/// Integer class labels from the first CSV column.
pub fn read_csv_labels(path: &Path) -> Result<Vec<usize>> {
    read_csv_column(path)?
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Parse(format!("record {}: label {v} is not a nonnegative integer", i + 1)))
            }
        })
        .collect()
}

fn csv_error(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse(format!("{other:?}")),
        }
    } else {
        Error::Parse(e.to_string())
    }
}

/// Writes via a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_with_comments() {
        let m = parse_matrix("# covariance\n2 2\n1 0.5\n# mid\n0.5 2\n").unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]));
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(parse_matrix(""), Err(Error::Parse(_))));
        assert!(matches!(parse_matrix("2 2\n1 2\n"), Err(Error::Parse(_))));
        assert!(matches!(parse_matrix("1 2\n1 x\n"), Err(Error::Parse(_))));
        assert!(matches!(parse_matrix("1 2\n1 2 3\n"), Err(Error::Parse(_))));
        assert!(matches!(parse_matrix("1 1\n1\n2\n"), Err(Error::Parse(_))));
    }

    #[test]
    fn format_round_trips() {
        let m = DMatrix::from_row_slice(2, 3, &[0.1, -1e-300, 1.0 / 3.0, 7.0, 2e20, -0.0]);
        let back = parse_matrix(&format_matrix(&m)).unwrap();
        assert_eq!(
            m.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            back.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn csv_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("y.csv");
        std::fs::write(&p, "y,extra\n1.5,0\n-2,1\n").unwrap();
        assert_eq!(read_csv_column(&p).unwrap(), vec![1.5, -2.0]);
        std::fs::write(&p, "label\n0\n2\n").unwrap();
        assert_eq!(read_csv_labels(&p).unwrap(), vec![0, 2]);
        std::fs::write(&p, "label\n0.5\n").unwrap();
        assert!(matches!(read_csv_labels(&p), Err(Error::Parse(_))));
        assert!(matches!(read_csv_column(&dir.path().join("missing.csv")), Err(Error::Io(_))));
    }
}
