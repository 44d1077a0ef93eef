//! Per-channel batch normalization.

use super::graph::{Graph, Mode, Op, Var};
use super::Tensor;
use crate::error::{Error, Result};
use crate::par;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Running mean / variance buffers of one batchnorm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    /// The conventional starting point: mean 0, variance 1.
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

pub(crate) struct BnOutput {
    pub y: Tensor,
    pub xhat: Vec<f64>,
    pub invstd: Vec<f64>,
}

fn check(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = x.dims4("batchnorm2d")?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(
            "batchnorm2d",
            format!(
                "{c} channels but gamma {:?} / beta {:?}",
                gamma.shape(),
                beta.shape()
            ),
        ));
    }
    Ok((n, c, h * w))
}

fn normalize(x: &Tensor, gamma: &[f64], beta: &[f64], mean: &[f64], invstd: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (_, c, h, w) = x.dims4("batchnorm2d").expect("checked");
    let plane = h * w;
    let xd = x.data();
    let mut xhat = vec![0.0; xd.len()];
    par::for_each_chunk(&mut xhat, plane, |nc, out| {
        let ci = nc % c;
        for (o, v) in out.iter_mut().zip(&xd[nc * plane..][..plane]) {
            *o = (v - mean[ci]) * invstd[ci];
        }
    });
    let mut y = vec![0.0; xd.len()];
    par::for_each_chunk(&mut y, plane, |nc, out| {
        let ci = nc % c;
        for (o, v) in out.iter_mut().zip(&xhat[nc * plane..][..plane]) {
            *o = gamma[ci] * v + beta[ci];
        }
    });
    (xhat, y)
}

/// Train mode: batch statistics, updating `running` with `momentum` (running
/// variance uses the unbiased estimate). Eval mode: uses `running`.
pub(crate) fn batchnorm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mode: Mode,
    running: Option<&mut RunningStats>,
    eps: f64,
    momentum: f64,
) -> Result<BnOutput> {
    let (n, c, plane) = check(x, gamma, beta)?;
    let xd = x.data();
    let count = n * plane;
    let (mean, var) = match mode {
        Mode::Train => {
            if count < 2 {
                return Err(Error::invalid(
                    "batchnorm2d",
                    format!("train mode needs at least 2 values per channel, got {count}"),
                ));
            }
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ci in 0..c {
                let chan = || (0..n).flat_map(move |ni| &xd[(ni * c + ci) * plane..][..plane]);
                let m = chan().sum::<f64>() / count as f64;
                let v = chan().map(|v| (v - m) * (v - m)).sum::<f64>() / count as f64;
                mean[ci] = m;
                var[ci] = v;
            }
            if let Some(r) = running {
                if r.mean.len() != c || r.var.len() != c {
                    return Err(Error::shape("batchnorm2d", "running statistics channel count"));
                }
                let unbias = count as f64 / (count - 1) as f64;
                for ci in 0..c {
                    r.mean[ci] = (1.0 - momentum) * r.mean[ci] + momentum * mean[ci];
                    r.var[ci] = (1.0 - momentum) * r.var[ci] + momentum * var[ci] * unbias;
                }
            }
            (mean, var)
        }
        Mode::Eval => {
            let r = running.ok_or(Error::MissingRunningStats)?;
            if r.mean.len() != c || r.var.len() != c {
                return Err(Error::shape("batchnorm2d", "running statistics channel count"));
            }
            (r.mean.clone(), r.var.clone())
        }
    };
    let invstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let (xhat, y) = normalize(x, gamma.data(), beta.data(), &mean, &invstd);
    Ok(BnOutput {
        y: Tensor::new(x.shape().to_vec(), y)?,
        xhat,
        invstd,
    })
}

pub(crate) fn batchnorm_backward(
    x: &Tensor,
    gamma: &Tensor,
    xhat: &[f64],
    invstd: &[f64],
    train: bool,
    gout: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (n, c, h, w) = x.dims4("batchnorm2d").expect("checked");
    let plane = h * w;
    let count = (n * plane) as f64;
    let mut sum_dy = vec![0.0; c];
    let mut sum_dy_xhat = vec![0.0; c];
    for ci in 0..c {
        for ni in 0..n {
            let off = (ni * c + ci) * plane;
            for (g, xh) in gout[off..][..plane].iter().zip(&xhat[off..][..plane]) {
                sum_dy[ci] += g;
                sum_dy_xhat[ci] += g * xh;
            }
        }
    }
    let gd = gamma.data();
    let mut gx = vec![0.0; gout.len()];
    par::for_each_chunk(&mut gx, plane, |nc, out| {
        let ci = nc % c;
        let off = nc * plane;
        let k = gd[ci] * invstd[ci];
        for ((o, g), xh) in out.iter_mut().zip(&gout[off..][..plane]).zip(&xhat[off..][..plane]) {
            *o = if train {
                k / count * (count * g - sum_dy[ci] - xh * sum_dy_xhat[ci])
            } else {
                k * g
            };
        }
    });
    (gx, sum_dy_xhat, sum_dy)
}

impl Graph {
    /// Batch normalization over `(N, H, W)` per channel.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: Mode,
        running: Option<&mut RunningStats>,
        eps: f64,
        momentum: f64,
    ) -> Result<Var> {
        let out = batchnorm_forward(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            mode,
            running,
            eps,
            momentum,
        )?;
        Ok(self.push(
            out.y,
            Op::BatchNorm {
                xhat: out.xhat,
                invstd: out.invstd,
                train: mode == Mode::Train,
            },
            vec![x, gamma, beta],
        ))
    }
}
