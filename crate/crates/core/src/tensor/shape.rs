//! Layout ops: channel concat/slice, batch slicing, nearest upsampling, cropping.

use super::graph::{Graph, Op, Var};
use super::Tensor;
use crate::error::{Error, Result};

pub(crate) fn concat_backward(y: &Tensor, channels: &[usize], gout: &[f64]) -> Vec<Vec<f64>> {
    let (n, total, h, w) = y.dims4("concat_channels").expect("checked");
    let plane = h * w;
    let mut grads: Vec<Vec<f64>> = channels.iter().map(|c| Vec::with_capacity(n * c * plane)).collect();
    for ni in 0..n {
        let mut off = ni * total * plane;
        for (g, &c) in grads.iter_mut().zip(channels) {
            g.extend_from_slice(&gout[off..off + c * plane]);
            off += c * plane;
        }
    }
    grads
}

pub(crate) fn slice_batch_backward(x: &Tensor, start: usize, gout: &[f64]) -> Vec<f64> {
    let per = x.numel() / x.shape()[0];
    let mut gx = vec![0.0; x.numel()];
    gx[start * per..start * per + gout.len()].copy_from_slice(gout);
    gx
}

pub(crate) fn slice_channels_backward(x: &Tensor, start: usize, gout: &[f64]) -> Vec<f64> {
    let (n, c, h, w) = x.dims4("slice_channels").expect("checked");
    let plane = h * w;
    let len = gout.len() / (n * plane);
    let mut gx = vec![0.0; x.numel()];
    for ni in 0..n {
        let dst = (ni * c + start) * plane;
        gx[dst..dst + len * plane].copy_from_slice(&gout[ni * len * plane..][..len * plane]);
    }
    gx
}

pub(crate) fn upsample_forward(x: &Tensor, factor: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4("upsample_nearest")?;
    if factor == 0 {
        return Err(Error::invalid("upsample_nearest", "factor must be positive"));
    }
    let (oh, ow) = (h * factor, w * factor);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for nc in 0..n * c {
        for oy in 0..oh {
            let row = &xd[(nc * h + oy / factor) * w..][..w];
            out.extend((0..ow).map(|ox| row[ox / factor]));
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

pub(crate) fn upsample_backward(x: &Tensor, factor: usize, gout: &[f64]) -> Vec<f64> {
    let (n, c, h, w) = x.dims4("upsample_nearest").expect("checked");
    let (oh, ow) = (h * factor, w * factor);
    let mut gx = vec![0.0; x.numel()];
    for nc in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                gx[(nc * h + oy / factor) * w + ox / factor] += gout[(nc * oh + oy) * ow + ox];
            }
        }
    }
    gx
}

pub(crate) fn crop_backward(x: &Tensor, y: &Tensor, top: usize, left: usize, gout: &[f64]) -> Vec<f64> {
    let (n, c, h, w) = x.dims4("crop_spatial").expect("checked");
    let (_, _, oh, ow) = y.dims4("crop_spatial").expect("checked");
    let mut gx = vec![0.0; x.numel()];
    for nc in 0..n * c {
        for oy in 0..oh {
            let dst = (nc * h + top + oy) * w + left;
            gx[dst..dst + ow].copy_from_slice(&gout[(nc * oh + oy) * ow..][..ow]);
        }
    }
    gx
}

impl Graph {
    /// Concatenates `[N,Ci,H,W]` tensors along channels, preserving order.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(Error::invalid("concat_channels", "empty input list"));
        };
        let (n, _, h, w) = self.value(first).dims4("concat_channels")?;
        let mut channels = Vec::with_capacity(xs.len());
        for &x in xs {
            let (xn, xc, xh, xw) = self.value(x).dims4("concat_channels")?;
            if (xn, xh, xw) != (n, h, w) {
                return Err(Error::shape(
                    "concat_channels",
                    format!("expected N,H,W = {n},{h},{w}, got {xn},{xh},{xw}"),
                ));
            }
            channels.push(xc);
        }
        if xs.len() == 1 {
            return Ok(first);
        }
        let total: usize = channels.iter().sum();
        let plane = h * w;
        let mut out = Vec::with_capacity(n * total * plane);
        for ni in 0..n {
            for (&x, &c) in xs.iter().zip(&channels) {
                out.extend_from_slice(&self.value(x).data()[ni * c * plane..][..c * plane]);
            }
        }
        let y = Tensor::new(vec![n, total, h, w], out)?;
        Ok(self.push(y, Op::Concat { channels }, xs.to_vec()))
    }

    /// Batch items `start..start+len` of any tensor whose first axis is batch.
    pub fn slice_batch(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.shape()[0];
        if len == 0 || start + len > n {
            return Err(Error::shape(
                "slice_batch",
                format!("range {start}..{} out of batch {n}", start + len),
            ));
        }
        let per = xv.numel() / n;
        let mut shape = xv.shape().to_vec();
        shape[0] = len;
        let y = Tensor::new(shape, xv.data()[start * per..(start + len) * per].to_vec())?;
        Ok(self.push(y, Op::SliceBatch { start }, vec![x]))
    }

    /// Channels `start..start+len` of `[N,C,H,W]`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4("slice_channels")?;
        if len == 0 || start + len > c {
            return Err(Error::shape(
                "slice_channels",
                format!("range {start}..{} out of {c} channels", start + len),
            ));
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * len * plane);
        for ni in 0..n {
            out.extend_from_slice(&xv.data()[(ni * c + start) * plane..][..len * plane]);
        }
        let y = Tensor::new(vec![n, len, h, w], out)?;
        Ok(self.push(y, Op::SliceChannels { start }, vec![x]))
    }

    /// Nearest-neighbour upsampling: every pixel becomes a `factor x factor` block.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 1 {
            self.value(x).dims4("upsample_nearest")?;
            return Ok(x);
        }
        let y = upsample_forward(self.value(x), factor)?;
        Ok(self.push(y, Op::Upsample { factor }, vec![x]))
    }

    /// Spatial window `[top, top+h) x [left, left+w)`.
    pub fn crop_spatial(&mut self, x: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, xh, xw) = xv.dims4("crop_spatial")?;
        if h == 0 || w == 0 || top + h > xh || left + w > xw {
            return Err(Error::shape(
                "crop_spatial",
                format!("window {h}x{w} at ({top},{left}) exceeds {xh}x{xw}"),
            ));
        }
        if (h, w) == (xh, xw) {
            return Ok(x);
        }
        let mut out = Vec::with_capacity(n * c * h * w);
        for nc in 0..n * c {
            for oy in 0..h {
                out.extend_from_slice(&xv.data()[(nc * xh + top + oy) * xw + left..][..w]);
            }
        }
        let y = Tensor::new(vec![n, c, h, w], out)?;
        Ok(self.push(y, Op::Crop { top, left }, vec![x]))
    }
}
