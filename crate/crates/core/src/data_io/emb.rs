//! EMB1 binary embedding files and their CSV equivalent.
//!
//! Binary layout (all integers little-endian):
//!
//! | offset | size  | field                         |
//! |--------|-------|-------------------------------|
//! | 0      | 4     | magic `EMB1`                  |
//! | 4      | 1     | version, currently `1`        |
//! | 5      | 4     | `d` as `u32`                  |
//! | 9      | 8     | record count as `u64`         |
//! | 17     | ...   | records                       |
//!
//! Each record is a `u32` label followed by `d` IEEE-754 binary32 values.
//! Features are widened to `f64` on read.

use std::fs;
use std::path::Path;

use crate::error::{at_path, Error, Result};
use crate::linalg::Vector;
use crate::ncmetrics::FeatureSnapshot;
use crate::ClassId;

pub const MAGIC: [u8; 4] = *b"EMB1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 17;

/// Decoded contents of an embedding file.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingFile {
    pub dim: usize,
    pub records: Vec<(ClassId, Vector)>,
}

impl EmbeddingFile {
    pub fn new(dim: usize, records: Vec<(ClassId, Vector)>) -> Result<Self> {
        check_dims(dim, &records)?;
        Ok(EmbeddingFile { dim, records })
    }

    pub fn into_snapshot(self) -> Result<FeatureSnapshot> {
        FeatureSnapshot::new(self.dim, self.records)
    }
}

fn check_dims(dim: usize, records: &[(ClassId, Vector)]) -> Result<()> {
    if let Some((label, v)) = records.iter().find(|(_, v)| v.dim() != dim) {
        return Err(Error::Dimension(format!(
            "record with label {label} has dimension {}, file dimension is {dim}",
            v.dim()
        )));
    }
    Ok(())
}

fn to_f32(x: f64) -> Result<f32> {
    let v = x as f32;
    if !v.is_finite() {
        return Err(Error::Format(format!(
            "value {x} is not representable as binary32"
        )));
    }
    Ok(v)
}

pub fn encode_embeddings(dim: usize, records: &[(ClassId, Vector)]) -> Result<Vec<u8>> {
    check_dims(dim, records)?;
    let dim32 = u32::try_from(dim)
        .map_err(|_| Error::Dimension(format!("dimension {dim} does not fit in u32")))?;
    let mut out = Vec::with_capacity(HEADER_LEN + records.len() * (4 + 4 * dim));
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&dim32.to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for (label, feature) in records {
        out.extend_from_slice(&label.to_le_bytes());
        for x in feature.iter() {
            out.extend_from_slice(&to_f32(*x)?.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingFile> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if bytes[0..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"EMB1\"",
            String::from_utf8_lossy(&bytes[0..4])
        )));
    }
    if bytes[4] != VERSION {
        return Err(Error::Format(format!(
            "unsupported EMB1 version {} (expected {VERSION})",
            bytes[4]
        )));
    }
    let dim = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let count = u64::from_le_bytes(bytes[9..17].try_into().expect("8 bytes"));
    let record_len = 4 + 4 * dim;
    let body = &bytes[HEADER_LEN..];
    let expected = (count as u128) * record_len as u128;
    if body.len() as u128 != expected {
        return Err(Error::Format(format!(
            "header declares {count} records of {record_len} bytes but body has {} bytes",
            body.len()
        )));
    }
    let mut records = Vec::with_capacity(count as usize);
    for chunk in body.chunks_exact(record_len) {
        let label = u32::from_le_bytes(chunk[0..4].try_into().expect("4 bytes"));
        let feature: Vec<f64> = chunk[4..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        let feature = Vector::new(feature)
            .map_err(|_| Error::Format(format!("non-finite feature in record {label}")))?;
        records.push((label, feature));
    }
    Ok(EmbeddingFile { dim, records })
}

pub fn write_embeddings(path: &Path, dim: usize, records: &[(ClassId, Vector)]) -> Result<()> {
    fs::write(path, encode_embeddings(dim, records)?).map_err(at_path(path))?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingFile> {
    decode_embeddings(&fs::read(path).map_err(at_path(path))?)
}

/// Writes `label,f0,...,f{d-1}` CSV. Values are rounded to binary32 first so
/// that CSV and EMB1 hold the same numbers.
pub fn write_csv(path: &Path, dim: usize, records: &[(ClassId, Vector)]) -> Result<()> {
    check_dims(dim, records)?;
    let mut w = csv::Writer::from_writer(fs::File::create(path).map_err(at_path(path))?);
    let mut header = vec!["label".to_string()];
    header.extend((0..dim).map(|i| format!("f{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for (label, feature) in records {
        let mut row = vec![label.to_string()];
        for x in feature.iter() {
            row.push(to_f32(*x)?.to_string());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<EmbeddingFile> {
    let mut r = csv::Reader::from_reader(fs::File::open(path).map_err(at_path(path))?);
    let headers = r.headers().map_err(csv_err)?.clone();
    if headers.get(0) != Some("label") {
        return Err(Error::Format("CSV header must start with \"label\"".into()));
    }
    let dim = headers.len() - 1;
    for (i, h) in headers.iter().skip(1).enumerate() {
        if h != format!("f{i}") {
            return Err(Error::Format(format!(
                "CSV column {} is {h:?}, expected \"f{i}\"",
                i + 1
            )));
        }
    }
    let mut records = Vec::new();
    for (line, row) in r.records().enumerate() {
        let row = row.map_err(csv_err)?;
        if row.len() != dim + 1 {
            return Err(Error::Dimension(format!(
                "CSV row {} has {} features, expected {dim}",
                line + 1,
                row.len().saturating_sub(1)
            )));
        }
        let label: ClassId = row[0]
            .trim()
            .parse()
            .map_err(|e| Error::Format(format!("bad label {:?}: {e}", &row[0])))?;
        let feature = row
            .iter()
            .skip(1)
            .map(|s| {
                s.trim()
                    .parse::<f32>()
                    .map(f64::from)
                    .map_err(|e| Error::Format(format!("bad value {s:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let feature = Vector::new(feature)
            .map_err(|_| Error::Format(format!("non-finite value in CSV row {}", line + 1)))?;
        records.push((label, feature));
    }
    Ok(EmbeddingFile { dim, records })
}

fn csv_err(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Format(format!("{other:?}")),
        }
    } else {
        Error::Format(e.to_string())
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Reads EMB1 or, for a `.csv` extension, CSV.
pub fn read_any(path: &Path) -> Result<EmbeddingFile> {
    if is_csv(path) {
        read_csv(path)
    } else {
        read_embeddings(path)
    }
}

/// Writes EMB1 or, for a `.csv` extension, CSV.
pub fn write_any(path: &Path, dim: usize, records: &[(ClassId, Vector)]) -> Result<()> {
    if is_csv(path) {
        write_csv(path, dim, records)
    } else {
        write_embeddings(path, dim, records)
    }
}
