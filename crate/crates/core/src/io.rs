//! Plain-text formats shared by the curator, the modeler and the tools.

use std::fs;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{input_err, Result};

/// Headerless CSV, '.' decimal separator, shortest round-trip float text.
pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))
            .expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("writing to memory")).expect("ascii output")
}

/// Parses a headerless numeric CSV. Rows are numbered from 1 in errors.
pub fn matrix_from_csv(reader: impl Read) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| crate::Error::Input(format!("row {}: {e}", i + 1)))?;
        match cols {
            None => cols = Some(rec.len()),
            Some(c) if c != rec.len() => {
                return input_err(format!(
                    "row {} has {} fields, expected {c}",
                    i + 1,
                    rec.len()
                ))
            }
            _ => {}
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                crate::Error::Input(format!(
                    "row {}, column {}: not a number: {field:?}",
                    i + 1,
                    j + 1
                ))
            })?;
            data.push(v);
        }
        rows += 1;
    }
    let cols = cols.unwrap_or(0);
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

/// Writes to a sibling temp file and renames it into place, so readers never
/// see a partially written `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let file_name = path.file_name().ok_or_else(|| {
        std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "output path has no file name",
        )
    })?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp-{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}
