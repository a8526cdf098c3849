//! CSV ingestion and input digests.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use optmed::Dataset;
use sha2::{Digest, Sha256};

use crate::CliError;

pub struct Table {
    pub dataset: Dataset,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::parse(format!("cannot read {}: {e}", path.display())))
}

/// Reads a headed CSV: the treatment and outcome columns by name, every other
/// column a mediator in file order. The data is returned raw (uncentred).
pub fn read_dataset(path: &Path, treatment: &str, outcome: &str) -> Result<Table, CliError> {
    let bytes = read_file(path)?;
    let sha256 = sha256_hex(&bytes);
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes.as_slice());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::parse(format!("{}: bad header: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let find = |name: &str, flag: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::parse(format!("{flag} column `{name}` not found in {}", path.display())))
    };
    let t_col = find(treatment, "--treatment")?;
    let y_col = find(outcome, "--outcome")?;
    if t_col == y_col {
        return Err(CliError::parse("treatment and outcome must be different columns".into()));
    }
    let mediator_cols: Vec<usize> = (0..headers.len()).filter(|&j| j != t_col && j != y_col).collect();
    if mediator_cols.is_empty() {
        return Err(CliError::parse("no mediator columns".into()));
    }

    let mut x = Vec::new();
    let mut a = Vec::new();
    let mut y = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| CliError::parse(format!("row {row}: {e}")))?;
        if record.len() != headers.len() {
            return Err(CliError::parse(format!(
                "row {row} has {} fields, header has {}",
                record.len(),
                headers.len()
            )));
        }
        let cell = |j: usize| -> Result<f64, CliError> {
            let raw = record[j].trim();
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(CliError::parse(format!(
                    "row {row}, column `{}`: `{raw}` is not a finite number",
                    headers[j]
                ))),
            }
        };
        a.push(cell(t_col)?);
        y.push(cell(y_col)?);
        for &j in &mediator_cols {
            x.push(cell(j)?);
        }
    }
    let n = a.len();
    let p = mediator_cols.len();
    let names = mediator_cols.iter().map(|&j| headers[j].clone()).collect();
    let dataset = Dataset::with_names(
        DMatrix::from_row_slice(n, p, &x),
        DVector::from_vec(a),
        DVector::from_vec(y),
        names,
    )
    .map_err(CliError::from)?;
    Ok(Table { dataset, sha256 })
}
