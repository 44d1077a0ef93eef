//! In-memory volumes and their raw little-endian file format.
//!
//! Layout: 6-byte magic (`MSVOL1` or `MSMSK1`), a version byte, the dims
//! `(slices, height, width)` as three little-endian `u32`, then the payload:
//! `f32` little-endian voxels for images, one byte per voxel for masks.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const VOLUME_MAGIC: &[u8; 6] = b"MSVOL1";
pub const MASK_MAGIC: &[u8; 6] = b"MSMSK1";
pub const FORMAT_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 6 + 1 + 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    pub slices: usize,
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub fn new(slices: usize, height: usize, width: usize) -> Self {
        Dims { slices, height, width }
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn voxels(&self) -> usize {
        self.slices * self.plane()
    }
}

/// Grayscale volume, slice-major then row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: Dims,
    voxels: Vec<f32>,
    /// Free-form tags (patient, time point, ...). Not stored in the file format.
    pub meta: BTreeMap<String, String>,
}

impl Volume {
    pub fn new(dims: Dims, voxels: Vec<f32>) -> Result<Self> {
        if dims.voxels() != voxels.len() {
            return Err(Error::Data(format!(
                "volume dims {dims:?} need {} voxels, got {}",
                dims.voxels(),
                voxels.len()
            )));
        }
        if let Some(v) = voxels.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Data(format!("voxel value {v} is negative or non-finite")));
        }
        Ok(Volume {
            dims,
            voxels,
            meta: BTreeMap::new(),
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn slice(&self, i: usize) -> &[f32] {
        let p = self.dims.plane();
        &self.voxels[i * p..(i + 1) * p]
    }
}

/// Binary label volume with the same layout as [`Volume`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskVolume {
    dims: Dims,
    labels: Vec<u8>,
}

impl MaskVolume {
    pub fn new(dims: Dims, labels: Vec<u8>) -> Result<Self> {
        if dims.voxels() != labels.len() {
            return Err(Error::Data(format!(
                "mask dims {dims:?} need {} voxels, got {}",
                dims.voxels(),
                labels.len()
            )));
        }
        if let Some(v) = labels.iter().find(|&&v| v > 1) {
            return Err(Error::Data(format!("mask label {v} is not binary")));
        }
        Ok(MaskVolume { dims, labels })
    }

    pub fn zeros(dims: Dims) -> Self {
        MaskVolume {
            dims,
            labels: vec![0; dims.voxels()],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn slice(&self, i: usize) -> &[u8] {
        let p = self.dims.plane();
        &self.labels[i * p..(i + 1) * p]
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&v| v == 1).count()
    }
}

fn header(magic: &[u8; 6], dims: Dims) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(magic);
    out.push(FORMAT_VERSION);
    for d in [dims.slices, dims.height, dims.width] {
        let d = u32::try_from(d).map_err(|_| Error::Data(format!("dimension {d} does not fit in u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    Ok(out)
}

/// Parses the header and returns the dims and the payload slice.
fn parse_header<'a>(magic: &[u8; 6], bytes: &'a [u8], bytes_per_voxel: usize) -> Result<(Dims, &'a [u8])> {
    if bytes.len() < 6 || &bytes[..6] != magic {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    if bytes[6] != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(bytes[6]));
    }
    let raw: [u32; 3] = std::array::from_fn(|i| u32::from_le_bytes(bytes[7 + 4 * i..11 + 4 * i].try_into().expect("4 bytes")));
    if raw.contains(&0) {
        return Err(Error::Malformed(format!("zero dimension in {raw:?}")));
    }
    let payload = raw
        .iter()
        .try_fold(bytes_per_voxel, |acc, &d| acc.checked_mul(d as usize))
        .filter(|&n| n <= isize::MAX as usize - HEADER_LEN)
        .ok_or(Error::DimOverflow(raw))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() < payload {
        return Err(Error::Truncated {
            expected: HEADER_LEN + payload,
            found: bytes.len(),
        });
    }
    if body.len() > payload {
        return Err(Error::Malformed(format!("{} trailing bytes", body.len() - payload)));
    }
    Ok((Dims::new(raw[0] as usize, raw[1] as usize, raw[2] as usize), body))
}

pub fn encode_volume(v: &Volume) -> Result<Vec<u8>> {
    let mut out = header(VOLUME_MAGIC, v.dims)?;
    out.reserve(v.voxels.len() * 4);
    for x in &v.voxels {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_volume(bytes: &[u8]) -> Result<Volume> {
    let (dims, body) = parse_header(VOLUME_MAGIC, bytes, 4)?;
    let voxels = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Volume::new(dims, voxels)
}

pub fn encode_mask(m: &MaskVolume) -> Result<Vec<u8>> {
    let mut out = header(MASK_MAGIC, m.dims)?;
    out.extend_from_slice(&m.labels);
    Ok(out)
}

pub fn decode_mask(bytes: &[u8]) -> Result<MaskVolume> {
    let (dims, body) = parse_header(MASK_MAGIC, bytes, 1)?;
    MaskVolume::new(dims, body.to_vec())
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::Data(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn save_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_volume(v)?)
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    decode_volume(&read(path.as_ref())?)
}

pub fn save_mask(m: &MaskVolume, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_mask(m)?)
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<MaskVolume> {
    decode_mask(&read(path.as_ref())?)
}
