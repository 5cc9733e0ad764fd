//! On-disk tensor container.
//!
//! Layout: 4 magic bytes `RQT1`, a little-endian u32 byte length, that many
//! bytes of UTF-8 JSON header `{"dtype":"f64","shape":[rows,cols],"order":
//! "row-major"}`, then the raw little-endian f64 payload in row-major order.
//! Payloads are always stored as f64; reading into another scalar type
//! converts on the way in.

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::matrix::DenseMatrix;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"RQT1";

#[derive(Debug)]
pub enum TensorIoError {
    /// File does not start with the expected magic bytes.
    BadMagic { path: PathBuf, found: [u8; 4] },
    /// Header is not the expected JSON document.
    BadHeader { path: PathBuf, detail: String },
    /// Payload ended before `shape` was satisfied.
    Truncated {
        path: PathBuf,
        expected_values: usize,
        got_values: usize,
    },
    /// Payload holds a non-finite value.
    NonFinite { path: PathBuf, index: usize },
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl fmt::Display for TensorIoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BadMagic { path, found } => write!(
                f,
                "{}: bad magic bytes {:?}, expected {:?} (\"RQT1\")",
                path.display(),
                found,
                MAGIC
            ),
            Self::BadHeader { path, detail } => {
                write!(f, "{}: bad tensor header: {detail}", path.display())
            }
            Self::Truncated {
                path,
                expected_values,
                got_values,
            } => write!(
                f,
                "{}: truncated payload: header declares {expected_values} values, file holds {got_values}",
                path.display()
            ),
            Self::NonFinite { path, index } => write!(
                f,
                "{}: non-finite payload value at index {index}",
                path.display()
            ),
            Self::Io { path, source } => write!(f, "{}: {source}", path.display()),
        }
    }
}

impl std::error::Error for TensorIoError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Self::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dtype: String,
    shape: [usize; 2],
    order: String,
}

fn io_err(path: &Path, source: std::io::Error) -> TensorIoError {
    TensorIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write a matrix to `path` atomically (temp file + rename), so interrupted
/// runs never leave a half-written container behind.
pub fn write_tensor<F: Scalar>(path: &Path, m: &DenseMatrix<F>) -> Result<(), TensorIoError> {
    let header = Header {
        dtype: "f64".to_string(),
        shape: [m.rows(), m.cols()],
        order: "row-major".to_string(),
    };
    let header_bytes = serde_json::to_vec(&header).expect("header serializes");

    let mut buf = Vec::with_capacity(4 + 4 + header_bytes.len() + m.data().len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_bytes);
    for v in m.data() {
        let as_f64 = v.to_f64().expect("scalar converts to f64");
        buf.extend_from_slice(&as_f64.to_le_bytes());
    }
    atomic_write(path, &buf)
}

/// Read a matrix back, validating magic, header, payload length and
/// finiteness. Round-trips are bit-exact for f64 matrices.
pub fn read_tensor<F: Scalar>(path: &Path) -> Result<DenseMatrix<F>, TensorIoError> {
    let mut file = fs::File::open(path).map_err(|e| io_err(path, e))?;

    let mut magic = [0u8; 4];
    file.read_exact(&mut magic).map_err(|e| io_err(path, e))?;
    if &magic != MAGIC {
        return Err(TensorIoError::BadMagic {
            path: path.to_path_buf(),
            found: magic,
        });
    }

    let mut len_bytes = [0u8; 4];
    file.read_exact(&mut len_bytes)
        .map_err(|e| io_err(path, e))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)
        .map_err(|e| io_err(path, e))?;
    let header: Header =
        serde_json::from_slice(&header_bytes).map_err(|e| TensorIoError::BadHeader {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
    if header.dtype != "f64" {
        return Err(TensorIoError::BadHeader {
            path: path.to_path_buf(),
            detail: format!("unsupported dtype {:?}, expected \"f64\"", header.dtype),
        });
    }
    if header.order != "row-major" {
        return Err(TensorIoError::BadHeader {
            path: path.to_path_buf(),
            detail: format!(
                "unsupported order {:?}, expected \"row-major\"",
                header.order
            ),
        });
    }

    let [rows, cols] = header.shape;
    let expected = rows
        .checked_mul(cols)
        .ok_or_else(|| TensorIoError::BadHeader {
            path: path.to_path_buf(),
            detail: format!("shape [{rows},{cols}] overflows"),
        })?;

    let mut payload = Vec::new();
    file.read_to_end(&mut payload)
        .map_err(|e| io_err(path, e))?;
    let got = payload.len() / 8;
    if payload.len() % 8 != 0 || got != expected {
        return Err(TensorIoError::Truncated {
            path: path.to_path_buf(),
            expected_values: expected,
            got_values: got,
        });
    }

    let mut data = Vec::with_capacity(expected);
    for (i, chunk) in payload.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("chunks_exact yields 8 bytes"));
        if !v.is_finite() {
            return Err(TensorIoError::NonFinite {
                path: path.to_path_buf(),
                index: i,
            });
        }
        data.push(F::from_f64_lossy(v));
    }
    Ok(DenseMatrix::from_vec(rows, cols, data))
}

/// Write `bytes` to `path` via a temp file in the same directory plus rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), TensorIoError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp_name = format!(
        ".{}.tmp-{}",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "tensor".to_string()),
        std::process::id()
    );
    let tmp_path = match dir {
        Some(d) => d.join(&tmp_name),
        None => PathBuf::from(&tmp_name),
    };
    let result = (|| {
        let mut f = fs::File::create(&tmp_path).map_err(|e| io_err(&tmp_path, e))?;
        f.write_all(bytes).map_err(|e| io_err(&tmp_path, e))?;
        f.sync_all().map_err(|e| io_err(&tmp_path, e))?;
        fs::rename(&tmp_path, path).map_err(|e| io_err(path, e))
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp_path);
    }
    result
}
