//! The `EMB1` binary embedding format.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size | content |
//! | ------ | ---- | ------- |
//! | 0 | 4 | ASCII magic `EMB1` |
//! | 4 | 4 | `u32` row count N |
//! | 8 | 4 | `u32` dimension D |
//! | 12 | … | N ids, each a `u16` byte length followed by UTF-8 bytes |
//! | … | 4·N·D | `f32` values, row-major |
//!
//! The file ends exactly after the last float.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {0:?}, expected \"EMB1\"")]
    BadMagic([u8; 4]),
    #[error("file too short for header")]
    TruncatedHeader,
    #[error("payload truncated: expected {expected} bytes after id table, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("id #{0} is not valid UTF-8")]
    InvalidUtf8(usize),
    #[error("id {0:?} longer than 65535 bytes")]
    IdTooLong(String),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("non-finite value in row {row} ({id:?}), column {col}")]
    NonFinite { row: usize, id: String, col: usize },
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("{ids} ids but {values} values for dimension {dim}")]
    ShapeMismatch {
        ids: usize,
        values: usize,
        dim: usize,
    },
    #[error("row count {0} does not fit the format")]
    TooManyRows(usize),
}

/// N embedding rows of a fixed dimension, keyed by image id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    /// Validates shape, id uniqueness and finiteness.
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::ZeroDimension);
        }
        if ids.len().checked_mul(dim) != Some(data.len()) {
            return Err(EmbeddingError::ShapeMismatch {
                ids: ids.len(),
                values: data.len(),
                dim,
            });
        }
        if u32::try_from(ids.len()).is_err() {
            return Err(EmbeddingError::TooManyRows(ids.len()));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(EmbeddingError::DuplicateId(id.clone()));
            }
            if id.len() > u16::MAX as usize {
                return Err(EmbeddingError::IdTooLong(id.clone()));
            }
        }
        for (i, v) in data.iter().enumerate() {
            if !v.is_finite() {
                let row = i / dim;
                return Err(EmbeddingError::NonFinite {
                    row,
                    id: ids[row].clone(),
                    col: i % dim,
                });
            }
        }
        Ok(Self { ids, dim, data })
    }

    /// Builds a matrix from `(id, row)` pairs; every row must have length `dim`.
    pub fn from_rows<I, S>(dim: usize, rows: I) -> Result<Self, EmbeddingError>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for (id, row) in rows {
            let id = id.into();
            if row.len() != dim {
                return Err(EmbeddingError::ShapeMismatch {
                    ids: ids.len() + 1,
                    values: data.len() + row.len(),
                    dim,
                });
            }
            ids.push(id);
            data.extend_from_slice(&row);
        }
        Self::new(ids, dim, data)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.data.chunks_exact(self.dim))
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Serializes to `EMB1` bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let id_bytes: usize = self.ids.iter().map(|s| 2 + s.len()).sum();
        let mut out = Vec::with_capacity(12 + id_bytes + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.ids.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses `EMB1` bytes, enforcing every matrix invariant.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EmbeddingError> {
        if bytes.len() < 12 {
            if bytes.len() >= 4 && &bytes[..4] != MAGIC {
                return Err(EmbeddingError::BadMagic(bytes[..4].try_into().unwrap()));
            }
            return Err(EmbeddingError::TruncatedHeader);
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if &magic != MAGIC {
            return Err(EmbeddingError::BadMagic(magic));
        }
        let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if dim == 0 {
            return Err(EmbeddingError::ZeroDimension);
        }

        let mut cursor = 12;
        let mut ids = Vec::with_capacity(n.min(1 << 20));
        for i in 0..n {
            let Some(len_bytes) = bytes.get(cursor..cursor + 2) else {
                return Err(EmbeddingError::TruncatedHeader);
            };
            let len = u16::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
            cursor += 2;
            let Some(raw) = bytes.get(cursor..cursor + len) else {
                return Err(EmbeddingError::TruncatedHeader);
            };
            let id = std::str::from_utf8(raw).map_err(|_| EmbeddingError::InvalidUtf8(i))?;
            ids.push(id.to_owned());
            cursor += len;
        }

        let payload = &bytes[cursor..];
        let expected = n
            .checked_mul(dim)
            .and_then(|v| v.checked_mul(4))
            .ok_or(EmbeddingError::TooManyRows(n))?;
        if payload.len() < expected {
            return Err(EmbeddingError::TruncatedPayload {
                expected,
                found: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(EmbeddingError::TrailingBytes(payload.len() - expected));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(ids, dim, data)
    }
}

pub fn write_embeddings(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<(), EmbeddingError> {
    let path = path.as_ref();
    fs::write(path, m.to_bytes()).map_err(|source| EmbeddingError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix, EmbeddingError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| EmbeddingError::Io {
        path: path.display().to_string(),
        source,
    })?;
    EmbeddingMatrix::from_bytes(&bytes)
}
