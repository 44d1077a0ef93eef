//! Black-slice removal, region-of-interest cropping and intensity scaling.

use crate::error::{Error, Result};

use super::volume::{Dims, MaskVolume, Volume};

fn check_pair(op: &'static str, v: &Volume, m: &MaskVolume) -> Result<()> {
    if v.dims() != m.dims() {
        return Err(Error::shape(op, format!("image dims {:?} != mask dims {:?}", v.dims(), m.dims())));
    }
    Ok(())
}

fn rebuild(v: &Volume, dims: Dims, voxels: Vec<f32>) -> Result<Volume> {
    let mut out = Volume::new(dims, voxels)?;
    out.meta = v.meta.clone();
    Ok(out)
}

/// Drops every slice whose image voxels are all zero, together with the
/// matching mask slice.
pub fn remove_black_slices(v: &Volume, m: &MaskVolume) -> Result<(Volume, MaskVolume)> {
    check_pair("remove_black_slices", v, m)?;
    let d = v.dims();
    let keep: Vec<usize> = (0..d.slices).filter(|&i| v.slice(i).iter().any(|&x| x != 0.0)).collect();
    if keep.is_empty() {
        return Err(Error::Data("every slice is black".into()));
    }
    let dims = Dims::new(keep.len(), d.height, d.width);
    let voxels = keep.iter().flat_map(|&i| v.slice(i).iter().copied()).collect();
    let labels = keep.iter().flat_map(|&i| m.slice(i).iter().copied()).collect();
    Ok((rebuild(v, dims, voxels)?, MaskVolume::new(dims, labels)?))
}

/// Inclusive bounding box of the nonzero voxels, projected over all slices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContentBox {
    pub row0: usize,
    pub row1: usize,
    pub col0: usize,
    pub col1: usize,
}

impl ContentBox {
    pub fn height(&self) -> usize {
        self.row1 - self.row0 + 1
    }

    pub fn width(&self) -> usize {
        self.col1 - self.col0 + 1
    }
}

pub fn content_box(v: &Volume) -> Option<ContentBox> {
    let d = v.dims();
    let mut b: Option<ContentBox> = None;
    for s in 0..d.slices {
        let plane = v.slice(s);
        for r in 0..d.height {
            for c in 0..d.width {
                if plane[r * d.width + c] == 0.0 {
                    continue;
                }
                b = Some(match b {
                    None => ContentBox { row0: r, row1: r, col0: c, col1: c },
                    Some(b) => ContentBox {
                        row0: b.row0.min(r),
                        row1: b.row1.max(r),
                        col0: b.col0.min(c),
                        col1: b.col1.max(c),
                    },
                });
            }
        }
    }
    b
}

/// Start of a `len`-wide window centred on `[lo, hi]` and clamped to `[0, extent)`.
fn window_start(lo: usize, hi: usize, len: usize, extent: usize) -> usize {
    let center = (lo + hi).div_ceil(2);
    center.saturating_sub(len / 2).min(extent - len)
}

/// Crops image and mask to `target = (height, width)` around the content box.
pub fn crop_to_roi(v: &Volume, m: &MaskVolume, target: (usize, usize)) -> Result<(Volume, MaskVolume)> {
    check_pair("crop_to_roi", v, m)?;
    let d = v.dims();
    let (th, tw) = target;
    if th == 0 || tw == 0 || d.height < th || d.width < tw {
        return Err(Error::invalid(
            "crop_to_roi",
            format!("cannot crop {}x{} to {th}x{tw}", d.height, d.width),
        ));
    }
    let b = content_box(v).ok_or_else(|| Error::Data("volume has no nonzero voxels".into()))?;
    if b.height() > th || b.width() > tw {
        return Err(Error::Data(format!(
            "content box rows {}..={} cols {}..={} ({}x{}) exceeds crop {th}x{tw}",
            b.row0,
            b.row1,
            b.col0,
            b.col1,
            b.height(),
            b.width()
        )));
    }
    let top = window_start(b.row0, b.row1, th, d.height);
    let left = window_start(b.col0, b.col1, tw, d.width);
    let dims = Dims::new(d.slices, th, tw);
    let mut voxels = Vec::with_capacity(dims.voxels());
    let mut labels = Vec::with_capacity(dims.voxels());
    for s in 0..d.slices {
        let (pv, pm) = (v.slice(s), m.slice(s));
        for r in top..top + th {
            let row = r * d.width + left;
            voxels.extend_from_slice(&pv[row..row + tw]);
            labels.extend_from_slice(&pm[row..row + tw]);
        }
    }
    Ok((rebuild(v, dims, voxels)?, MaskVolume::new(dims, labels)?))
}

/// Per-volume min-max rescale to `[0, 1]`.
pub fn normalize_intensity(v: &Volume) -> Result<Volume> {
    let (lo, hi) = v
        .voxels()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if hi <= lo {
        return Err(Error::Data(format!("constant volume (value {lo}) cannot be normalized")));
    }
    let span = f64::from(hi) - f64::from(lo);
    let voxels = v
        .voxels()
        .iter()
        .map(|&x| ((f64::from(x) - f64::from(lo)) / span) as f32)
        .collect();
    rebuild(v, v.dims(), voxels)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PreprocessSummary {
    pub slices_in: usize,
    pub slices_out: usize,
    pub dims_out: Dims,
}

/// Full chain: black-slice removal, crop to `target`, min-max normalization.
pub fn preprocess(v: &Volume, m: &MaskVolume, target: (usize, usize)) -> Result<(Volume, MaskVolume, PreprocessSummary)> {
    let (v1, m1) = remove_black_slices(v, m)?;
    let (v2, m2) = crop_to_roi(&v1, &m1, target)?;
    let v3 = normalize_intensity(&v2)?;
    let summary = PreprocessSummary {
        slices_in: v.dims().slices,
        slices_out: v3.dims().slices,
        dims_out: v3.dims(),
    };
    Ok((v3, m2, summary))
}
