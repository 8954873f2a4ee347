//! Binary tensor container shared by checkpoints and preprocessed exports.
//!
//! Layout:
//!
//! ```text
//! "FERCKPT1"                      8 bytes
//! manifest length                 u64, little endian
//! manifest                        UTF-8 JSON object
//! payload                         raw little-endian tensors in table order
//! ```
//!
//! The manifest carries `format_version`, a free-form `header` object and
//! a `tensors` table of `{name, shape, dtype, byte_offset, byte_length}`
//! where offsets are relative to the start of the payload.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"FERCKPT1";
const MAGIC_STEM: &[u8; 7] = b"FERCKPT";
pub const FORMAT_VERSION: u32 = 1;
const PREFIX_LEN: u64 = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub byte_offset: u64,
    pub byte_length: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    header: Value,
    tensors: Vec<TensorEntry>,
}

/// Builds a tensor table with contiguous offsets.
pub fn layout(tensors: impl IntoIterator<Item = (String, Vec<usize>, DType)>) -> Vec<TensorEntry> {
    let mut offset = 0u64;
    tensors
        .into_iter()
        .map(|(name, shape, dtype)| {
            let len = (shape.iter().product::<usize>() * dtype.size()) as u64;
            let e = TensorEntry {
                name,
                shape,
                dtype,
                byte_offset: offset,
                byte_length: len,
            };
            offset += len;
            e
        })
        .collect()
}

/// Streams tensors into a container whose table is fixed up front.
pub struct ContainerWriter {
    path: PathBuf,
    out: BufWriter<File>,
    table: Vec<TensorEntry>,
    next: usize,
    scratch: Vec<u8>,
}

impl ContainerWriter {
    pub fn create(path: &Path, header: Value, table: Vec<TensorEntry>) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let manifest = serde_json::to_vec(&Manifest {
            format_version: FORMAT_VERSION,
            header,
            tensors: table.clone(),
        })
        .expect("manifest serializes");
        let io = |e| Error::io(path, e);
        out.write_all(MAGIC).map_err(io)?;
        out.write_all(&(manifest.len() as u64).to_le_bytes()).map_err(io)?;
        out.write_all(&manifest).map_err(io)?;
        Ok(ContainerWriter {
            path: path.to_path_buf(),
            out,
            table,
            next: 0,
            scratch: Vec::new(),
        })
    }

    /// Writes the next tensor; it must match the next table entry.
    pub fn write<T: Scalar>(&mut self, tensor: &Tensor<T>) -> Result<()> {
        let Some(entry) = self.table.get(self.next) else {
            return Err(Error::InvalidArgument(format!(
                "{}: more tensors written than the {} declared",
                self.path.display(),
                self.table.len()
            )));
        };
        if entry.shape != tensor.shape() || entry.dtype != T::DTYPE {
            return Err(Error::InvalidArgument(format!(
                "{}: tensor `{}` declared {:?} {:?}, got {:?} {:?}",
                self.path.display(),
                entry.name,
                entry.shape,
                entry.dtype,
                tensor.shape(),
                T::DTYPE
            )));
        }
        self.scratch.clear();
        for &v in tensor.as_slice() {
            v.write_le(&mut self.scratch);
        }
        self.out.write_all(&self.scratch).map_err(|e| Error::io(&self.path, e))?;
        self.next += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.next != self.table.len() {
            return Err(Error::InvalidArgument(format!(
                "{}: wrote {} of {} declared tensors",
                self.path.display(),
                self.next,
                self.table.len()
            )));
        }
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// A fully loaded container.
#[derive(Debug)]
pub struct Container {
    path: PathBuf,
    pub header: Value,
    pub tensors: Vec<TensorEntry>,
    payload: Vec<u8>,
}

impl Container {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, bytes)
    }

    pub fn parse(path: &Path, bytes: Vec<u8>) -> Result<Self> {
        let path_buf = path.to_path_buf();
        let actual = bytes.len() as u64;
        if bytes.len() < MAGIC_STEM.len() || &bytes[..MAGIC_STEM.len()] != MAGIC_STEM {
            return Err(Error::BadMagic { path: path_buf });
        }
        if bytes.len() < MAGIC.len() {
            return Err(Error::Truncated { path: path_buf, expected: PREFIX_LEN, actual });
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::Version {
                path: path_buf,
                found: String::from_utf8_lossy(&bytes[..8]).into_owned(),
                expected: String::from_utf8_lossy(MAGIC).into_owned(),
            });
        }
        if actual < PREFIX_LEN {
            return Err(Error::Truncated { path: path_buf, expected: PREFIX_LEN, actual });
        }
        let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let payload_start = PREFIX_LEN.checked_add(manifest_len).ok_or_else(|| Error::Manifest {
            path: path_buf.clone(),
            message: "manifest length overflows".into(),
        })?;
        if actual < payload_start {
            return Err(Error::Truncated { path: path_buf, expected: payload_start, actual });
        }
        let manifest: Manifest = serde_json::from_slice(&bytes[16..payload_start as usize]).map_err(|e| Error::Manifest {
            path: path_buf.clone(),
            message: e.to_string(),
        })?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Version {
                path: path_buf,
                found: manifest.format_version.to_string(),
                expected: FORMAT_VERSION.to_string(),
            });
        }

        let mut offset = 0u64;
        for e in &manifest.tensors {
            let want = (e.shape.iter().product::<usize>() * e.dtype.size()) as u64;
            if e.byte_length != want {
                return Err(Error::PayloadMismatch {
                    path: path_buf,
                    detail: format!(
                        "tensor `{}` of shape {:?} {:?} needs {want} bytes, table says {}",
                        e.name, e.shape, e.dtype, e.byte_length
                    ),
                });
            }
            if e.byte_offset != offset {
                return Err(Error::PayloadMismatch {
                    path: path_buf,
                    detail: format!("tensor `{}` starts at {}, expected {offset}", e.name, e.byte_offset),
                });
            }
            offset += e.byte_length;
        }
        let expected = payload_start + offset;
        if actual < expected {
            return Err(Error::Truncated { path: path_buf, expected, actual });
        }
        if actual > expected {
            return Err(Error::PayloadMismatch {
                path: path_buf,
                detail: format!("table accounts for {expected} bytes but file has {actual}"),
            });
        }
        let payload = bytes[payload_start as usize..].to_vec();
        Ok(Container {
            path: path_buf,
            header: manifest.header,
            tensors: manifest.tensors,
            payload,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn entry(&self, name: &str) -> Option<&TensorEntry> {
        self.tensors.iter().find(|e| e.name == name)
    }

    pub fn tensor_at<T: Scalar>(&self, index: usize) -> Result<Tensor<T>> {
        let e = &self.tensors[index];
        if e.dtype != T::DTYPE {
            return Err(Error::PayloadMismatch {
                path: self.path.clone(),
                detail: format!("tensor `{}` is {:?}, requested {:?}", e.name, e.dtype, T::DTYPE),
            });
        }
        let bytes = &self.payload[e.byte_offset as usize..(e.byte_offset + e.byte_length) as usize];
        let data = bytes.chunks_exact(e.dtype.size()).map(T::read_le).collect();
        Tensor::from_vec(&e.shape, data)
    }

    pub fn tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        let index = self.tensors.iter().position(|e| e.name == name).ok_or_else(|| Error::Manifest {
            path: self.path.clone(),
            message: format!("missing tensor `{name}`"),
        })?;
        self.tensor_at(index)
    }
}
