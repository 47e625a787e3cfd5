//! Per-video snippet feature files.
//!
//! Layout (little-endian): magic `ACMF`, `u32` version (= 1), `u32` snippet count `L`,
//! `u32` feature width `2D`, then `L * 2D` `f32` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"ACMF";
pub const FEATURE_VERSION: u32 = 1;
pub const FEATURE_EXTENSION: &str = "acmf";

/// Native-rate snippet features of one video; first half of the columns is RGB, second half flow.
#[derive(Debug, Clone, PartialEq)]
pub struct SnippetFeatureSequence {
    pub video_id: String,
    pub features: Array2<f32>,
}

impl SnippetFeatureSequence {
    pub fn new(video_id: impl Into<String>, features: Array2<f32>) -> Result<Self> {
        let video_id = video_id.into();
        if features.nrows() == 0 {
            return Err(Error::Load { video_id, reason: "feature sequence has no snippets".into() });
        }
        if features.ncols() == 0 || features.ncols() % 2 != 0 {
            return Err(Error::Load {
                video_id,
                reason: format!("feature width {} is not a positive even number", features.ncols()),
            });
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Load {
                video_id,
                reason: format!("non-finite feature value at flat index {pos}"),
            });
        }
        Ok(SnippetFeatureSequence { video_id, features })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.features.ncols()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(FEATURE_MAGIC)?;
        w.write_u32::<LittleEndian>(FEATURE_VERSION)?;
        w.write_u32::<LittleEndian>(self.len() as u32)?;
        w.write_u32::<LittleEndian>(self.width() as u32)?;
        for &v in self.features.iter() {
            w.write_f32::<LittleEndian>(v)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(video_id: &str, r: &mut R) -> Result<Self> {
        let load_err = |reason: String| Error::Load { video_id: video_id.to_string(), reason };
        let io_err = |e: std::io::Error| load_err(format!("truncated or unreadable feature file: {e}"));

        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io_err)?;
        if &magic != FEATURE_MAGIC {
            return Err(load_err(format!("bad magic {magic:?}")));
        }
        let version = r.read_u32::<LittleEndian>().map_err(io_err)?;
        if version != FEATURE_VERSION {
            return Err(load_err(format!("unsupported feature file version {version}")));
        }
        let len = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
        let width = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
        let mut data = vec![0f32; len * width];
        r.read_f32_into::<LittleEndian>(&mut data).map_err(io_err)?;
        let features = Array2::from_shape_vec((len, width), data)
            .map_err(|e| load_err(format!("bad feature shape: {e}")))?;
        Self::new(video_id, features)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(video_id: &str, path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::Load {
            video_id: video_id.to_string(),
            reason: format!("cannot open feature file {}: {e}", path.display()),
        })?;
        Self::read_from(video_id, &mut BufReader::new(file))
    }
}
