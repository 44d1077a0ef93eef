//! Windowed max / mean pooling. Trailing rows/columns that do not fill a
//! window are dropped.

use super::graph::{Graph, Op, Var};
use super::Tensor;
use crate::error::{Error, Result};

fn pooled(op: &'static str, x: &Tensor, k: usize, stride: usize) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = x.dims4(op)?;
    if k == 0 || stride == 0 {
        return Err(Error::invalid(op, "window and stride must be positive"));
    }
    if k > h || k > w {
        return Err(Error::shape(op, format!("window {k} exceeds spatial extent {h}x{w}")));
    }
    Ok((n, c, h, w, (h - k) / stride + 1, (w - k) / stride + 1))
}

/// Returns pooled values and, per output, the flat input index of the first
/// maximum in row-major window order.
pub(crate) fn maxpool_forward(x: &Tensor, k: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let (n, c, h, w, oh, ow) = pooled("maxpool2d", x, k, stride)?;
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(out.capacity());
    for nc in 0..n * c {
        let base = nc * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for dy in 0..k {
                    for dx in 0..k {
                        let i = base + (oy * stride + dy) * w + ox * stride + dx;
                        if xd[i] > xd[best] {
                            best = i;
                        }
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, argmax))
}

pub(crate) fn maxpool_backward(x: &Tensor, argmax: &[usize], gout: &[f64]) -> Vec<f64> {
    let mut gx = vec![0.0; x.numel()];
    for (&i, g) in argmax.iter().zip(gout) {
        gx[i] += g;
    }
    gx
}

pub(crate) fn avgpool_forward(x: &Tensor, k: usize, stride: usize) -> Result<Tensor> {
    let (n, c, h, w, oh, ow) = pooled("avgpool2d", x, k, stride)?;
    let xd = x.data();
    let area = (k * k) as f64;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for nc in 0..n * c {
        let base = nc * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = 0.0;
                for dy in 0..k {
                    for dx in 0..k {
                        s += xd[base + (oy * stride + dy) * w + ox * stride + dx];
                    }
                }
                out.push(s / area);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

pub(crate) fn avgpool_backward(x: &Tensor, y: &Tensor, k: usize, stride: usize, gout: &[f64]) -> Vec<f64> {
    let (n, c, h, w) = x.dims4("avgpool2d").expect("checked");
    let (_, _, oh, ow) = y.dims4("avgpool2d").expect("checked");
    let area = (k * k) as f64;
    let mut gx = vec![0.0; x.numel()];
    for nc in 0..n * c {
        let base = nc * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let g = gout[(nc * oh + oy) * ow + ox] / area;
                for dy in 0..k {
                    for dx in 0..k {
                        gx[base + (oy * stride + dy) * w + ox * stride + dx] += g;
                    }
                }
            }
        }
    }
    gx
}

impl Graph {
    pub fn maxpool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let (y, argmax) = maxpool_forward(self.value(x), k, stride)?;
        Ok(self.push(y, Op::MaxPool { argmax }, vec![x]))
    }

    pub fn avgpool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let y = avgpool_forward(self.value(x), k, stride)?;
        Ok(self.push(y, Op::AvgPool { k, stride }, vec![x]))
    }
}
