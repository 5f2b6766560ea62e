use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TGE1";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Dense row-major single-precision matrix, one embedding per row.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    n_rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn zeros(n_rows: usize, dim: usize) -> Self {
        Self {
            n_rows,
            dim,
            data: vec![0.0; n_rows * dim],
        }
    }

    pub fn from_vec(n_rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n_rows * dim {
            return Err(Error::DimensionMismatch {
                context: "embedding buffer length",
                expected: n_rows * dim,
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("embedding row {}", pos / dim.max(1))));
        }
        Ok(Self { n_rows, dim, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::InconsistentEmbeddingDim {
                    expected: dim,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), dim, data)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        // chunks_exact on an empty dim would panic; dim 0 has no rows to show
        self.data.chunks_exact(self.dim.max(1)).take(self.n_rows)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// New matrix holding the listed rows in order.
    pub fn gather(&self, rows: &[u32]) -> EmbeddingMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            data.extend_from_slice(self.row(r as usize));
        }
        EmbeddingMatrix {
            n_rows: rows.len(),
            dim: self.dim,
            data,
        }
    }

    /// Contiguous row range as a new matrix.
    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> EmbeddingMatrix {
        EmbeddingMatrix {
            n_rows: range.len(),
            dim: self.dim,
            data: self.data[range.start * self.dim..range.end * self.dim].to_vec(),
        }
    }

    /// Stacks matrices of equal dimension vertically.
    pub fn vstack(parts: &[&EmbeddingMatrix]) -> Result<EmbeddingMatrix> {
        let dim = parts.first().map_or(0, |m| m.dim);
        let mut data = Vec::new();
        let mut n_rows = 0;
        for m in parts {
            if m.dim != dim {
                return Err(Error::DimensionMismatch {
                    context: "stacked embeddings",
                    expected: dim,
                    found: m.dim,
                });
            }
            data.extend_from_slice(&m.data);
            n_rows += m.n_rows;
        }
        Ok(EmbeddingMatrix { n_rows, dim, data })
    }

    /// SHA-256 over shape and raw little-endian payload.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n_rows as u64).to_le_bytes());
        h.update((self.dim as u64).to_le_bytes());
        for x in &self.data {
            h.update(x.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n_rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::NotEmbeddingFile);
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                expected: HEADER_LEN as u64,
                found: bytes.len() as u64,
            });
        }
        let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().unwrap());
        let version = word(4);
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let (n_rows, dim) = (word(8) as usize, word(12) as usize);
        let expected = (n_rows as u64) * (dim as u64) * 4;
        let payload = &bytes[HEADER_LEN..];
        if (payload.len() as u64) < expected {
            return Err(Error::Truncated {
                expected,
                found: payload.len() as u64,
            });
        }
        if payload.len() as u64 > expected {
            log::warn!("{} trailing bytes after embedding payload", payload.len() as u64 - expected);
        }
        let data = payload[..expected as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_vec(n_rows, dim, data)
    }
}

pub fn save_matrix(m: &EmbeddingMatrix, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&m.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_matrix(path: &Path) -> Result<EmbeddingMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingMatrix::from_bytes(&bytes)
}

/// Sidecar path holding one external ID per row: `<path>.ids`.
pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids");
    s.into()
}

pub fn save_sidecar<'a>(path: &Path, ids: impl Iterator<Item = &'a str>) -> Result<()> {
    let side = sidecar_path(path);
    let mut out = String::new();
    for id in ids {
        out.push_str(id);
        out.push('\n');
    }
    fs::write(&side, out).map_err(|e| Error::io(&side, e))
}

pub fn load_sidecar(path: &Path) -> Result<Vec<String>> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    Ok(text.lines().map(str::to_owned).collect())
}
