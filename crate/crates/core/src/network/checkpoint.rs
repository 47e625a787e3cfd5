//! Versioned parameter container.
//!
//! Layout: magic `ACMC`, `u32` version, `u32` header length, a JSON header
//! (architecture, scalar type, step count, tensor names and shapes), then every
//! tensor's values little-endian at the scalar's native width, in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{Architecture, Network};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ACMC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    dtype: String,
    step: u64,
    architecture: Architecture,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<S> {
    pub network: Network<S>,
    pub step: u64,
}

fn ck_err(e: impl std::fmt::Display) -> Error {
    Error::Checkpoint(e.to_string())
}

impl<S: Scalar> Checkpoint<S> {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let tensors = self.network.tensors();
        let header = Header {
            dtype: S::DTYPE.to_string(),
            step: self.step,
            architecture: self.network.arch.clone(),
            tensors: tensors
                .iter()
                .map(|(name, shape, _)| TensorEntry { name: name.to_string(), shape: shape.clone() })
                .collect(),
        };
        let header = serde_json::to_vec(&header).map_err(ck_err)?;
        w.write_all(CHECKPOINT_MAGIC).map_err(ck_err)?;
        w.write_u32::<LittleEndian>(CHECKPOINT_VERSION).map_err(ck_err)?;
        w.write_u32::<LittleEndian>(header.len() as u32).map_err(ck_err)?;
        w.write_all(&header).map_err(ck_err)?;
        for (_, _, data) in tensors {
            for &v in data {
                v.write_le(w).map_err(ck_err)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(ck_err)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(ck_err(format!("bad magic {magic:?}")));
        }
        let version = r.read_u32::<LittleEndian>().map_err(ck_err)?;
        if version != CHECKPOINT_VERSION {
            return Err(ck_err(format!("unsupported checkpoint version {version}")));
        }
        let len = r.read_u32::<LittleEndian>().map_err(ck_err)? as usize;
        let mut header = vec![0u8; len];
        r.read_exact(&mut header).map_err(ck_err)?;
        let header: Header = serde_json::from_slice(&header).map_err(ck_err)?;
        if header.dtype != S::DTYPE {
            return Err(ck_err(format!("checkpoint holds {} parameters, expected {}", header.dtype, S::DTYPE)));
        }
        header.architecture.validate()?;
        let mut network = Network::<S>::zeros(header.architecture);
        let expected: Vec<(String, Vec<usize>)> =
            network.tensors().into_iter().map(|(n, s, _)| (n.to_string(), s)).collect();
        let found: Vec<(String, Vec<usize>)> = header.tensors.into_iter().map(|t| (t.name, t.shape)).collect();
        if expected != found {
            return Err(ck_err(format!("tensor layout {found:?} does not match architecture {expected:?}")));
        }
        for dst in network.tensors_mut() {
            for v in dst.iter_mut() {
                *v = S::read_le(r).map_err(ck_err)?;
            }
        }
        let mut probe = [0u8; 1];
        if r.read(&mut probe).map_err(ck_err)? != 0 {
            return Err(ck_err("trailing bytes after tensor data"));
        }
        Ok(Checkpoint { network, step: header.step })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file))
    }
}
