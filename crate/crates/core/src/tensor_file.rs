//! The `G4TN` tensor interchange format.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "G4TN"
//! 4       1           version (1)
//! 5       1           rank (<= 8)
//! 6       2           reserved, zero
//! 8       4 * rank    dims, u32 little-endian
//! ...     4 * prod    payload, f32 little-endian, row-major
//! ```

use std::fs;
use std::path::Path;

use crate::correspondence::FeatureMap;
use crate::error::{Error, Result};
use crate::types::{ImageTensor, SoftMask};

pub const MAGIC: [u8; 4] = *b"G4TN";
pub const VERSION: u8 = 1;
pub const MAX_RANK: usize = 8;
const HEADER_LEN: usize = 8;

/// A dense float tensor as carried by the interchange format.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.len() > MAX_RANK {
            return Err(Error::invalid(format!(
                "rank {} exceeds maximum {MAX_RANK}",
                dims.len()
            )));
        }
        if let Some(d) = dims.iter().find(|&&d| d > u32::MAX as usize) {
            return Err(Error::invalid(format!("dimension {d} does not fit in u32")));
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn into_parts(self) -> (Vec<usize>, Vec<f32>) {
        (self.dims, self.data)
    }

    fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.rank() != rank {
            return Err(Error::shape(format!(
                "{what} needs a rank-{rank} tensor, got dims {:?}",
                self.dims
            )));
        }
        Ok(())
    }

    /// Interprets a `[h, w, c]` tensor as an image.
    pub fn into_image(self) -> Result<ImageTensor> {
        self.expect_rank(3, "image")?;
        let data = self.data.into_iter().map(f64::from).collect();
        ImageTensor::new(self.dims[0], self.dims[1], self.dims[2], data)
    }

    /// Interprets a `[h, w]` tensor as a soft mask.
    pub fn into_soft_mask(self) -> Result<SoftMask> {
        self.expect_rank(2, "soft mask")?;
        SoftMask::new(self.dims[0], self.dims[1], self.data)
    }

    /// Interprets a `[h, w, d]` tensor as an un-normalized feature map.
    pub fn into_feature_map(self) -> Result<FeatureMap> {
        self.expect_rank(3, "feature map")?;
        FeatureMap::new(self.dims[0], self.dims[1], self.dims[2], self.data)
    }
}

impl From<&ImageTensor> for Tensor {
    fn from(img: &ImageTensor) -> Self {
        let (h, w, c) = img.shape();
        Tensor {
            dims: vec![h, w, c],
            data: img.data().iter().map(|&v| v as f32).collect(),
        }
    }
}

impl From<&SoftMask> for Tensor {
    fn from(m: &SoftMask) -> Self {
        Tensor {
            dims: vec![m.height(), m.width()],
            data: m.values().to_vec(),
        }
    }
}

impl From<&FeatureMap> for Tensor {
    fn from(f: &FeatureMap) -> Self {
        Tensor {
            dims: vec![f.height(), f.width(), f.dim()],
            data: f.data().to_vec(),
        }
    }
}

pub fn write_tensor(tensor: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * tensor.rank() + 4 * tensor.data.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(tensor.rank() as u8);
    out.extend_from_slice(&[0, 0]);
    for &d in &tensor.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in &tensor.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_tensor(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated(format!(
            "header needs {HEADER_LEN} bytes, got {}",
            bytes.len()
        )));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4-byte slice");
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if bytes[4] != VERSION {
        return Err(Error::UnsupportedVersion(bytes[4]));
    }
    let rank = usize::from(bytes[5]);
    if rank > MAX_RANK {
        return Err(Error::Malformed(format!("rank {rank} exceeds {MAX_RANK}")));
    }
    if bytes[6] != 0 || bytes[7] != 0 {
        return Err(Error::Malformed("reserved bytes are not zero".into()));
    }
    let dims_end = HEADER_LEN + 4 * rank;
    if bytes.len() < dims_end {
        return Err(Error::Truncated(format!(
            "dims need {dims_end} bytes, got {}",
            bytes.len()
        )));
    }
    let dims: Vec<usize> = bytes[HEADER_LEN..dims_end]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Malformed(format!("dims {dims:?} overflow")))?;
    let payload = &bytes[dims_end..];
    let need = count
        .checked_mul(4)
        .ok_or_else(|| Error::Malformed(format!("dims {dims:?} overflow")))?;
    if payload.len() < need {
        return Err(Error::Truncated(format!(
            "payload for dims {dims:?} needs {count} floats, got {} bytes",
            payload.len()
        )));
    }
    if payload.len() > need {
        return Err(Error::Malformed(format!(
            "{} trailing bytes after payload",
            payload.len() - need
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    Ok(Tensor { dims, data })
}

pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_tensor(&bytes).map_err(|e| match e {
        Error::Io { .. } => e,
        other => Error::Malformed(format!("{}: {other}", path.display())),
    })
}

pub fn save(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_tensor(tensor)).map_err(|e| Error::io(path, e))
}
