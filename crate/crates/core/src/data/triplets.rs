//! Three-slice input samples and time-major batch assembly.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::volume::{MaskVolume, Volume};

/// One training sample: slice `center` with neighbours `members = (prev, center, next)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub center: usize,
    pub members: [usize; 3],
}

impl Triplet {
    pub fn image<'v>(&self, v: &'v Volume) -> [&'v [f32]; 3] {
        self.members.map(|i| v.slice(i))
    }

    pub fn target<'m>(&self, m: &'m MaskVolume) -> &'m [u8] {
        m.slice(self.center)
    }
}

/// One triplet per slice; the first and last slices reuse themselves as the
/// missing neighbour.
pub fn make_triplets(slices: usize) -> Vec<Triplet> {
    (0..slices)
        .map(|i| Triplet {
            center: i,
            members: [i.saturating_sub(1), i, (i + 1).min(slices - 1)],
        })
        .collect()
}

/// Stacks samples into `[3B, 1, H, W]`, time-major: rows `t*B..(t+1)*B` hold
/// time step `t` of every sample.
pub fn batch_tensor(samples: &[(&Volume, Triplet)]) -> Result<Tensor> {
    let (first, _) = samples.first().ok_or_else(|| Error::invalid("batch_tensor", "empty batch"))?;
    let d = first.dims();
    let plane = d.plane();
    let b = samples.len();
    let mut data = vec![0.0; 3 * b * plane];
    for (n, (v, t)) in samples.iter().enumerate() {
        if (v.dims().height, v.dims().width) != (d.height, d.width) {
            return Err(Error::shape("batch_tensor", "samples have different slice sizes"));
        }
        for (step, src) in t.image(v).iter().enumerate() {
            let dst = &mut data[(step * b + n) * plane..][..plane];
            for (o, &x) in dst.iter_mut().zip(src.iter()) {
                *o = f64::from(x);
            }
        }
    }
    Tensor::new(vec![3 * b, 1, d.height, d.width], data)
}

/// Center-slice labels as a `[B, 1, H, W]` tensor of zeros and ones.
pub fn mask_tensor(samples: &[(&MaskVolume, Triplet)]) -> Result<Tensor> {
    let (first, _) = samples.first().ok_or_else(|| Error::invalid("mask_tensor", "empty batch"))?;
    let d = first.dims();
    let mut data = Vec::with_capacity(samples.len() * d.plane());
    for (m, t) in samples {
        if (m.dims().height, m.dims().width) != (d.height, d.width) {
            return Err(Error::shape("mask_tensor", "samples have different slice sizes"));
        }
        data.extend(t.target(m).iter().map(|&l| f64::from(l)));
    }
    Tensor::new(vec![samples.len(), 1, d.height, d.width], data)
}
