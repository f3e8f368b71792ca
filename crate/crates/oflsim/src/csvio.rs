//! Minimal CSV reading/writing with a versioned schema comment.
//!
//! All files start with a `# schema_version=1` comment line, followed by a
//! header row. Floats are written with Rust's shortest round-trip formatting,
//! which is deterministic across runs and platforms.

use ndarray::Array2;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Shortest round-trip representation of an f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn open_writer(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes a CSV file with the schema comment, a header, and string rows.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = open_writer(path)?;
    writeln!(w, "# schema_version={SCHEMA_VERSION}")?;
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV file written by [`write_csv`]: returns (header, rows).
/// Comment lines starting with `#` are skipped.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let reader = BufReader::new(File::open(path)?);
    let mut header: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
        if header.is_none() {
            header = Some(fields);
        } else {
            rows.push(fields);
        }
    }
    let header =
        header.ok_or_else(|| Error::Parse(format!("{}: missing header", path.display())))?;
    Ok((header, rows))
}

/// Writes a dense matrix, one row per line, no header beyond the schema line.
pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut w = open_writer(path)?;
    writeln!(w, "# schema_version={SCHEMA_VERSION}")?;
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a matrix written by [`write_matrix`].
pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let reader = BufReader::new(File::open(path)?);
    let mut data = Vec::new();
    let mut ncols = None;
    let mut nrows = 0;
    for line in reader.lines() {
        let line = line?;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|s| parse_f64(s.trim()))
            .collect::<Result<_>>()?;
        match ncols {
            None => ncols = Some(row.len()),
            Some(n) if n != row.len() => {
                return Err(Error::Parse(format!(
                    "{}: ragged matrix row (expected {n} columns, got {})",
                    path.display(),
                    row.len()
                )))
            }
            _ => {}
        }
        data.extend(row);
        nrows += 1;
    }
    let ncols = ncols.unwrap_or(0);
    Array2::from_shape_vec((nrows, ncols), data)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn parse_f64(s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::Parse(format!("bad float `{s}`")))
}

pub fn parse_usize(s: &str) -> Result<usize> {
    s.parse::<usize>()
        .map_err(|_| Error::Parse(format!("bad integer `{s}`")))
}
