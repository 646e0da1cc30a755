//! Matrix and vector literals as headerless CSV or JSON arrays.
//!
//! Values are written with Rust's shortest round-trip float formatting, so
//! reading back what was written reproduces every `f64` bit for bit.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(reader)
}

/// Reads rows of comma-separated numbers. All rows must have equal length.
pub fn read_matrix_csv<R: Read>(reader: R) -> Result<Array2<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in csv_reader(reader).records().enumerate() {
        let record = record?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let row = record
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| Error::Parse(format!("row {}: {f:?}: {e}", line + 1))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return Err(Error::Parse("empty matrix".into()));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != m) {
        return Err(Error::Parse(format!("row {} has {} columns, expected {m}", bad + 1, rows[bad].len())));
    }
    Array2::from_shape_vec((n, m), rows.into_iter().flatten().collect()).map_err(|e| Error::Parse(e.to_string()))
}

/// Reads a vector written either as one row or as one value per line.
pub fn read_vector_csv<R: Read>(reader: R) -> Result<Array1<f64>> {
    let m = read_matrix_csv(reader)?;
    match m.dim() {
        (1, _) | (_, 1) => Ok(Array1::from_iter(m.iter().copied())),
        (r, c) => Err(Error::Parse(format!("expected a vector, found a {r}x{c} matrix"))),
    }
}

pub fn write_matrix_csv<W: Write>(mut writer: W, m: ArrayView2<'_, f64>) -> Result<()> {
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(writer, "{}", line.join(","))?;
    }
    Ok(())
}

/// Writes a vector as a single CSV row.
pub fn write_vector_csv<W: Write>(mut writer: W, v: ArrayView1<'_, f64>) -> Result<()> {
    let line: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    writeln!(writer, "{}", line.join(","))?;
    Ok(())
}

pub fn load_matrix_csv(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    read_matrix_csv(File::open(path)?)
}

pub fn load_vector_csv(path: impl AsRef<Path>) -> Result<Array1<f64>> {
    read_vector_csv(File::open(path)?)
}

pub fn save_matrix_csv(path: impl AsRef<Path>, m: ArrayView2<'_, f64>) -> Result<()> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    write_matrix_csv(&mut f, m)?;
    f.flush()?;
    Ok(())
}

pub fn save_vector_csv(path: impl AsRef<Path>, v: ArrayView1<'_, f64>) -> Result<()> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    write_vector_csv(&mut f, v)?;
    f.flush()?;
    Ok(())
}

/// `[[a, b], [c, d]]`
pub fn matrix_to_json(m: ArrayView2<'_, f64>) -> serde_json::Value {
    m.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>().into()
}

pub fn matrix_from_json(value: &serde_json::Value) -> Result<Array2<f64>> {
    let rows: Vec<Vec<f64>> = serde_json::from_value(value.clone())?;
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(Error::Parse("JSON matrix must be a non-empty array of equal-length rows".into()));
    }
    Array2::from_shape_vec((n, m), rows.into_iter().flatten().collect()).map_err(|e| Error::Parse(e.to_string()))
}

pub fn vector_to_json(v: ArrayView1<'_, f64>) -> serde_json::Value {
    v.to_vec().into()
}

pub fn vector_from_json(value: &serde_json::Value) -> Result<Array1<f64>> {
    let v: Vec<f64> = serde_json::from_value(value.clone())?;
    Ok(Array1::from(v))
}
