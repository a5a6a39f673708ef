//! Matrix, vector and operator files.
//!
//! SMAT is the binary matrix container: the bytes `SMAT`, rows and cols as
//! u64 little-endian, then row-major f64 little-endian. The JSON alternative
//! is `{"rows": r, "cols": c, "data": [row-major]}`. Every write goes through
//! a temporary file in the target directory and a rename.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{MatJson, Mat};
use crate::measurements::{MeasurementOperator, OperatorHeader, OperatorKind};

const MAGIC: &[u8; 4] = b"SMAT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixFormat {
    Smat,
    Json,
}

fn row_major(a: &DMatrix<f64>) -> Vec<f64> {
    a.transpose().as_slice().to_vec()
}

pub fn write_smat<W: Write>(mut w: W, a: &DMatrix<f64>) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + 8 * a.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(a.nrows() as u64).to_le_bytes());
    buf.extend_from_slice(&(a.ncols() as u64).to_le_bytes());
    for v in row_major(a) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_smat<R: Read>(mut r: R) -> Result<DMatrix<f64>> {
    let mut head = [0u8; 20];
    r.read_exact(&mut head)
        .map_err(|_| Error::Format("truncated SMAT header".into()))?;
    if &head[..4] != MAGIC {
        return Err(Error::Format("bad magic, expected SMAT".into()));
    }
    let rows = u64::from_le_bytes(head[4..12].try_into().expect("8 bytes")) as usize;
    let cols = u64::from_le_bytes(head[12..20].try_into().expect("8 bytes")) as usize;
    let len = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Format(format!("SMAT dimensions {rows}x{cols} overflow")))?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != len {
        return Err(Error::Format(format!(
            "SMAT payload has {} bytes, {rows}x{cols} needs {len}",
            body.len()
        )));
    }
    let data: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

/// Write `bytes` to `path` through a temporary sibling file and a rename, so
/// the target is either absent, the old content or the full new content.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn matrix_bytes(a: &DMatrix<f64>, format: MatrixFormat) -> Result<Vec<u8>> {
    match format {
        MatrixFormat::Smat => {
            let mut buf = Vec::new();
            write_smat(&mut buf, a)?;
            Ok(buf)
        }
        MatrixFormat::Json => Ok(serde_json::to_vec(&MatJson::from_dmatrix(a))?),
    }
}

pub fn save_matrix(path: &Path, a: &DMatrix<f64>, format: MatrixFormat) -> Result<()> {
    atomic_write(path, &matrix_bytes(a, format)?)
}

/// Read either format; SMAT is recognised by its magic bytes.
pub fn load_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path)?;
    parse_matrix(&bytes)
}

pub fn parse_matrix(bytes: &[u8]) -> Result<DMatrix<f64>> {
    if bytes.starts_with(MAGIC) {
        read_smat(bytes)
    } else {
        serde_json::from_slice::<MatJson>(bytes)?.into_dmatrix()
    }
}

pub fn load_square(path: &Path) -> Result<Mat> {
    let a = load_matrix(path)?;
    if a.nrows() != a.ncols() {
        return Err(Error::Format(format!("expected a square matrix, got {}x{}", a.nrows(), a.ncols())));
    }
    Ok(Mat::wrap(a))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum VectorJson {
    Plain(Vec<f64>),
    Wrapped { data: Vec<f64> },
}

/// A measurement vector: a JSON array or `{"data": [...]}`.
pub fn parse_vector(bytes: &[u8]) -> Result<Vec<f64>> {
    let v = match serde_json::from_slice::<VectorJson>(bytes)? {
        VectorJson::Plain(v) | VectorJson::Wrapped { data: v } => v,
    };
    Ok(v)
}

pub fn load_vector(path: &Path) -> Result<Vec<f64>> {
    parse_vector(&fs::read(path)?)
}

pub fn save_vector(path: &Path, y: &[f64]) -> Result<()> {
    atomic_write(path, &serde_json::to_vec(y)?)
}

/// Write the JSON header to `path`. With `with_payload`, a dense operator's
/// matrix also goes to a sibling `.smat` file named in the header; otherwise
/// it is regenerated from the seed on load.
pub fn save_operator(path: &Path, op: &MeasurementOperator, with_payload: bool) -> Result<()> {
    let mut header = op.header();
    if with_payload {
        if let Some(a) = op.dense_payload() {
            let payload = path.with_extension("smat");
            save_matrix(&payload, a, MatrixFormat::Smat)?;
            let name = payload
                .file_name()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::Input(format!("unusable payload path {}", payload.display())))?;
            header.payload = Some(name.to_string());
        }
    }
    atomic_write(path, &serde_json::to_vec_pretty(&header)?)
}

pub fn load_operator(path: &Path, guard_mb: usize) -> Result<MeasurementOperator> {
    let header: OperatorHeader = serde_json::from_slice(&fs::read(path)?)?;
    let payload = match (&header.payload, header.kind) {
        (Some(name), OperatorKind::GaussianDense) => {
            let p: PathBuf = path.parent().unwrap_or(Path::new(".")).join(name);
            Some(load_matrix(&p)?)
        }
        (Some(_), _) => return Err(Error::Format("payload is only valid for gaussian-dense operators".into())),
        (None, _) => None,
    };
    MeasurementOperator::from_header(&header, payload, guard_mb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurements::{entry_mask_operator, gaussian_operator, DEFAULT_MEMORY_GUARD_MB};

    #[test]
    fn smat_layout_is_little_endian_row_major() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = matrix_bytes(&a, MatrixFormat::Smat).unwrap();
        assert_eq!(&b[..4], b"SMAT");
        assert_eq!(u64::from_le_bytes(b[4..12].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[12..20].try_into().unwrap()), 3);
        assert_eq!(f64::from_le_bytes(b[20..28].try_into().unwrap()), 1.0);
        assert_eq!(f64::from_le_bytes(b[28..36].try_into().unwrap()), 2.0);
        assert_eq!(b.len(), 20 + 6 * 8);
        assert_eq!(parse_matrix(&b).unwrap(), a);
    }

    #[test]
    fn json_matrix_round_trip_is_exact() {
        let a = DMatrix::from_fn(3, 3, |i, j| (i as f64 + 0.1).powf(j as f64 + 0.3) / 7.0);
        let b = matrix_bytes(&a, MatrixFormat::Json).unwrap();
        assert_eq!(parse_matrix(&b).unwrap(), a);
        let v: serde_json::Value = serde_json::from_slice(&b).unwrap();
        assert_eq!(v["rows"], 3);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let a = DMatrix::from_element(2, 2, 1.0);
        let mut b = matrix_bytes(&a, MatrixFormat::Smat).unwrap();
        assert!(parse_matrix(&b[..b.len() - 1]).is_err());
        assert!(parse_matrix(&b[..10]).is_err());
        b[0] = b'X';
        assert!(parse_matrix(&b).is_err());
        assert!(parse_matrix(br#"{"rows": 2, "cols": 2, "data": [1, 2, 3]}"#).is_err());
    }

    #[test]
    fn vectors_in_both_shapes() {
        assert_eq!(parse_vector(b"[1, 2.5]").unwrap(), vec![1.0, 2.5]);
        assert_eq!(parse_vector(br#"{"data": [3]}"#).unwrap(), vec![3.0]);
        assert!(parse_vector(b"{}").is_err());
    }

    #[test]
    fn operators_round_trip_with_and_without_payload() {
        let dir = tempfile::tempdir().unwrap();
        let op = gaussian_operator(4, 7, 11).unwrap();
        for with_payload in [false, true] {
            let path = dir.path().join(format!("op{with_payload}.json"));
            save_operator(&path, &op, with_payload).unwrap();
            let back = load_operator(&path, DEFAULT_MEMORY_GUARD_MB).unwrap();
            assert_eq!(back, op);
            assert_eq!(path.with_extension("smat").exists(), with_payload);
        }
        let mask = entry_mask_operator(3, &[(0, 1), (2, 2)], 0.5).unwrap();
        let path = dir.path().join("mask.json");
        save_operator(&path, &mask, true).unwrap();
        assert_eq!(load_operator(&path, DEFAULT_MEMORY_GUARD_MB).unwrap(), mask);
    }

    #[test]
    fn atomic_write_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.smat");
        save_matrix(&path, &DMatrix::identity(3, 3), MatrixFormat::Smat).unwrap();
        save_matrix(&path, &DMatrix::identity(2, 2), MatrixFormat::Smat).unwrap();
        assert_eq!(load_square(&path).unwrap(), Mat::wrap(DMatrix::identity(2, 2)));
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
