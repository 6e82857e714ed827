//! Per-frame feature vectors and their binary file format.
//!
//! Layout (all little-endian):
//!
//! ```text
//! magic  "RGFV"      4 bytes
//! T      u32         number of frames
//! D      u32         feature dimension
//! fps    f32
//! seed   u64         generator seed (0 when unknown)
//! data   T·D × f32   row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const FRAMES_MAGIC: &[u8; 4] = b"RGFV";
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 8;

#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    features: Vec<f32>,
    len: usize,
    dim: usize,
    pub fps: f32,
    pub seed: u64,
}

impl FrameSequence {
    pub fn new(features: Vec<f32>, dim: usize, fps: f32, seed: u64) -> Result<Self> {
        if dim == 0 || features.is_empty() || !features.len().is_multiple_of(dim) {
            return Err(Error::FrameFormat(format!("{} values do not form rows of width {dim}", features.len())));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::FrameFormat("non-finite feature value".into()));
        }
        Ok(Self { len: features.len() / dim, features, dim, fps, seed })
    }

    pub fn from_rows(rows: &[Vec<f64>], fps: f32) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        let flat = rows.iter().flatten().map(|&v| v as f32).collect();
        Self::new(flat, dim, fps, 0)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.features[t * self.dim..(t + 1) * self.dim]
    }

    pub fn row_f64(&self, t: usize) -> Vec<f64> {
        self.row(t).iter().map(|&v| f64::from(v)).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.features.len() * 4);
        out.extend_from_slice(FRAMES_MAGIC);
        out.extend_from_slice(&(self.len as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&self.fps.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for v in &self.features {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::FrameFormat("truncated header".into()));
        }
        if &bytes[..4] != FRAMES_MAGIC {
            return Err(Error::FrameFormat("bad magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let len = u32_at(4);
        let dim = u32_at(8);
        let fps = f32::from_le_bytes(bytes[12..16].try_into().unwrap());
        let seed = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let body = &bytes[HEADER_LEN..];
        if body.len() != len * dim * 4 {
            return Err(Error::FrameFormat(format!(
                "expected {} data bytes for {len}×{dim}, found {}",
                len * dim * 4,
                body.len()
            )));
        }
        let features = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Self::new(features, dim, fps, seed)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
