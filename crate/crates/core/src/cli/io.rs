//! CSV ingestion and emission.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sample_model::SampleBag;

/// Formats a number with 17 significant digits (round-trips exactly).
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x == f64::INFINITY {
        "inf".to_string()
    } else if x == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{x:.16e}")
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Csv {
        path: path.display().to_string(),
        message: message.into(),
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// A numeric table with a header row.
#[derive(Debug)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Reads a header + numeric rows CSV. Rows are numbered from 1 after the
/// header in error messages; columns by header name.
pub fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(csv_err(path, "missing header row"));
    }
    let mut seen = HashSet::new();
    for h in &header {
        if h.is_empty() {
            return Err(csv_err(path, "empty column name in header"));
        }
        if !seen.insert(h.as_str()) {
            return Err(csv_err(path, format!("duplicate column `{h}`")));
        }
    }
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row_no = r + 1;
        let record = record.map_err(|e| csv_err(path, format!("row {row_no}: {e}")))?;
        if record.len() != header.len() {
            return Err(csv_err(
                path,
                format!(
                    "row {row_no}: expected {} fields, found {}",
                    header.len(),
                    record.len()
                ),
            ));
        }
        let row = record
            .iter()
            .zip(&header)
            .map(|(cell, name)| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        csv_err(
                            path,
                            format!("row {row_no}, column `{name}`: `{cell}` is not a finite number"),
                        )
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.len() < 2 {
        return Err(csv_err(path, format!("need at least 2 data rows, found {}", rows.len())));
    }
    Ok(Table { header, rows })
}

/// Samples file: parameter columns plus the recognized optional columns
/// `log_density`, `log_prior` and `loglik_1..loglik_n`.
pub fn read_samples(path: &Path) -> Result<SampleBag> {
    let t = read_table(path)?;
    let mut params = Vec::new();
    let mut loglik: Vec<(usize, usize)> = Vec::new();
    let mut log_density = None;
    let mut log_prior = None;
    for (c, name) in t.header.iter().enumerate() {
        match name.as_str() {
            "log_density" => log_density = Some(c),
            "log_prior" => log_prior = Some(c),
            n if n.starts_with("loglik_") => {
                let j = n["loglik_".len()..].parse::<usize>().map_err(|_| {
                    csv_err(path, format!("column `{n}`: expected loglik_<integer>"))
                })?;
                loglik.push((j, c));
            }
            _ => params.push(c),
        }
    }
    loglik.sort();
    let col = |c: usize| -> Vec<f64> { t.rows.iter().map(|r| r[c]).collect() };
    let mut bag = SampleBag::new(
        params.iter().map(|&c| t.header[c].clone()).collect(),
        t.rows
            .iter()
            .map(|r| params.iter().map(|&c| r[c]).collect())
            .collect(),
    )?;
    if let Some(c) = log_density {
        bag = bag.with_log_density(col(c))?;
    }
    if let Some(c) = log_prior {
        bag = bag.with_log_prior(col(c))?;
    }
    if !loglik.is_empty() {
        bag = bag.with_log_lik_terms(
            t.rows
                .iter()
                .map(|r| loglik.iter().map(|&(_, c)| r[c]).collect())
                .collect(),
        )?;
    }
    Ok(bag)
}

/// Loss file: header of action labels, one row per sample.
pub fn read_losses(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let t = read_table(path)?;
    Ok((t.header, t.rows))
}

/// Accumulates rows of string cells and writes them as one CSV file.
pub struct CsvOut {
    path: PathBuf,
    writer: csv::Writer<Vec<u8>>,
}

impl CsvOut {
    pub fn new(path: PathBuf, header: &[&str]) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(header)
            .map_err(|e| csv_err(&path, e.to_string()))?;
        Ok(Self { path, writer })
    }

    pub fn row<I, S>(&mut self, cells: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer
            .write_record(cells)
            .map_err(|e| csv_err(&self.path, e.to_string()))
    }

    pub fn finish(self) -> Result<PathBuf> {
        let bytes = self
            .writer
            .into_inner()
            .map_err(|e| csv_err(&self.path, e.to_string()))?;
        write_bytes(&self.path, &bytes)?;
        Ok(self.path)
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(bytes).map_err(|e| io_err(path, e))
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}
