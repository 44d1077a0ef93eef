//! 2-D convolution (cross-correlation, zero padding) and its transpose.

use super::graph::{Graph, Op, Var};
use super::Tensor;
use crate::error::{Error, Result};
use crate::par;

/// Output indices `o` in `[lo, hi)` whose tap `o*stride + k - pad` lands inside `0..in_len`.
fn tap_range(k: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    if in_len + pad <= k {
        return (0, 0);
    }
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = ((in_len - 1 + pad - k) / stride + 1).min(out_len);
    (lo, hi.max(lo))
}

#[derive(Clone, Copy, Debug)]
struct Geom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

fn conv2d_geom(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<Geom> {
    let (n, c, h, wd) = x.dims4("conv2d")?;
    let (f, wc, kh, kw) = w.dims4("conv2d")?;
    if stride == 0 {
        return Err(Error::invalid("conv2d", "stride must be positive"));
    }
    if wc != c {
        return Err(Error::shape(
            "conv2d",
            format!("input has {c} channels but kernel {:?} expects {wc}", w.shape()),
        ));
    }
    if kh > h + 2 * pad || kw > wd + 2 * pad {
        return Err(Error::shape(
            "conv2d",
            format!("kernel {kh}x{kw} exceeds padded input {h}x{wd} (pad {pad})"),
        ));
    }
    Ok(Geom {
        n,
        c,
        h,
        w: wd,
        f,
        kh,
        kw,
        oh: (h + 2 * pad - kh) / stride + 1,
        ow: (wd + 2 * pad - kw) / stride + 1,
        stride,
        pad,
    })
}

fn check_bias(op: &'static str, b: Option<&Tensor>, f: usize) -> Result<()> {
    match b {
        Some(b) if b.shape() != [f] => Err(Error::shape(
            op,
            format!("bias shape {:?} does not match {f} output channels", b.shape()),
        )),
        _ => Ok(()),
    }
}

pub(crate) fn conv2d_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor> {
    let g = conv2d_geom(x, w, stride, pad)?;
    check_bias("conv2d", b, g.f)?;
    let (xd, wd) = (x.data(), w.data());
    let plane = g.oh * g.ow;
    let mut out = vec![0.0; g.n * g.f * plane];
    par::for_each_chunk(&mut out, plane, |nf, o| {
        let (ni, fi) = (nf / g.f, nf % g.f);
        if let Some(b) = b {
            o.fill(b.data()[fi]);
        }
        for ci in 0..g.c {
            let xp = &xd[(ni * g.c + ci) * g.h * g.w..][..g.h * g.w];
            for ki in 0..g.kh {
                let (ylo, yhi) = tap_range(ki, g.pad, g.stride, g.h, g.oh);
                for kj in 0..g.kw {
                    let (xlo, xhi) = tap_range(kj, g.pad, g.stride, g.w, g.ow);
                    let wv = wd[((fi * g.c + ci) * g.kh + ki) * g.kw + kj];
                    for oy in ylo..yhi {
                        let iy = oy * g.stride + ki - g.pad;
                        let row = &xp[iy * g.w..][..g.w];
                        let orow = &mut o[oy * g.ow..][..g.ow];
                        for ox in xlo..xhi {
                            orow[ox] += wv * row[ox * g.stride + kj - g.pad];
                        }
                    }
                }
            }
        }
    });
    Tensor::new(vec![g.n, g.f, g.oh, g.ow], out)
}

type ConvGrads = (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>);

fn bias_grad(gout: &[f64], n: usize, f: usize, plane: usize) -> Vec<f64> {
    (0..f)
        .map(|fi| {
            (0..n)
                .map(|ni| gout[(ni * f + fi) * plane..][..plane].iter().sum::<f64>())
                .sum()
        })
        .collect()
}

pub(crate) fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    gout: &[f64],
    stride: usize,
    pad: usize,
    needs: [bool; 3],
) -> ConvGrads {
    let g = conv2d_geom(x, w, stride, pad).expect("geometry validated in forward");
    let (xd, wd) = (x.data(), w.data());
    let plane = g.oh * g.ow;

    let gx = needs[0].then(|| {
        let mut gx = vec![0.0; xd.len()];
        par::for_each_chunk(&mut gx, g.h * g.w, |nc, gxp| {
            let (ni, ci) = (nc / g.c, nc % g.c);
            for fi in 0..g.f {
                let gp = &gout[(ni * g.f + fi) * plane..][..plane];
                for ki in 0..g.kh {
                    let (ylo, yhi) = tap_range(ki, g.pad, g.stride, g.h, g.oh);
                    for kj in 0..g.kw {
                        let (xlo, xhi) = tap_range(kj, g.pad, g.stride, g.w, g.ow);
                        let wv = wd[((fi * g.c + ci) * g.kh + ki) * g.kw + kj];
                        for oy in ylo..yhi {
                            let iy = oy * g.stride + ki - g.pad;
                            let grow = &gp[oy * g.ow..][..g.ow];
                            let xrow = &mut gxp[iy * g.w..][..g.w];
                            for ox in xlo..xhi {
                                xrow[ox * g.stride + kj - g.pad] += wv * grow[ox];
                            }
                        }
                    }
                }
            }
        });
        gx
    });

    let gw = needs[1].then(|| {
        let mut gw = vec![0.0; wd.len()];
        par::for_each_chunk(&mut gw, g.c * g.kh * g.kw, |fi, gwf| {
            for ci in 0..g.c {
                for ki in 0..g.kh {
                    let (ylo, yhi) = tap_range(ki, g.pad, g.stride, g.h, g.oh);
                    for kj in 0..g.kw {
                        let (xlo, xhi) = tap_range(kj, g.pad, g.stride, g.w, g.ow);
                        let mut acc = 0.0;
                        for ni in 0..g.n {
                            let gp = &gout[(ni * g.f + fi) * plane..][..plane];
                            let xp = &xd[(ni * g.c + ci) * g.h * g.w..][..g.h * g.w];
                            for oy in ylo..yhi {
                                let iy = oy * g.stride + ki - g.pad;
                                let grow = &gp[oy * g.ow..][..g.ow];
                                let xrow = &xp[iy * g.w..][..g.w];
                                for ox in xlo..xhi {
                                    acc += grow[ox] * xrow[ox * g.stride + kj - g.pad];
                                }
                            }
                        }
                        gwf[(ci * g.kh + ki) * g.kw + kj] = acc;
                    }
                }
            }
        });
        gw
    });

    let gb = needs[2].then(|| bias_grad(gout, g.n, g.f, plane));
    (gx, gw, gb)
}

fn conv_t_geom(x: &Tensor, w: &Tensor, stride: usize) -> Result<Geom> {
    let (n, c, h, wd) = x.dims4("conv_transpose2d")?;
    let (wc, f, kh, kw) = w.dims4("conv_transpose2d")?;
    if stride == 0 {
        return Err(Error::invalid("conv_transpose2d", "stride must be positive"));
    }
    if wc != c {
        return Err(Error::shape(
            "conv_transpose2d",
            format!("input has {c} channels but kernel {:?} expects {wc}", w.shape()),
        ));
    }
    Ok(Geom {
        n,
        c,
        h,
        w: wd,
        f,
        kh,
        kw,
        oh: (h - 1) * stride + kh,
        ow: (wd - 1) * stride + kw,
        stride,
        pad: 0,
    })
}

pub(crate) fn conv_transpose2d_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize) -> Result<Tensor> {
    let g = conv_t_geom(x, w, stride)?;
    check_bias("conv_transpose2d", b, g.f)?;
    let (xd, wd) = (x.data(), w.data());
    let plane = g.oh * g.ow;
    let mut out = vec![0.0; g.n * g.f * plane];
    par::for_each_chunk(&mut out, plane, |nf, o| {
        let (ni, fi) = (nf / g.f, nf % g.f);
        if let Some(b) = b {
            o.fill(b.data()[fi]);
        }
        for ci in 0..g.c {
            let xp = &xd[(ni * g.c + ci) * g.h * g.w..][..g.h * g.w];
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let wv = wd[((ci * g.f + fi) * g.kh + ki) * g.kw + kj];
                    for iy in 0..g.h {
                        let orow = &mut o[(iy * g.stride + ki) * g.ow..][..g.ow];
                        let xrow = &xp[iy * g.w..][..g.w];
                        for ix in 0..g.w {
                            orow[ix * g.stride + kj] += wv * xrow[ix];
                        }
                    }
                }
            }
        }
    });
    Tensor::new(vec![g.n, g.f, g.oh, g.ow], out)
}

pub(crate) fn conv_transpose2d_backward(
    x: &Tensor,
    w: &Tensor,
    gout: &[f64],
    stride: usize,
    needs: [bool; 3],
) -> ConvGrads {
    let g = conv_t_geom(x, w, stride).expect("geometry validated in forward");
    let (xd, wd) = (x.data(), w.data());
    let plane = g.oh * g.ow;

    let gx = needs[0].then(|| {
        let mut gx = vec![0.0; xd.len()];
        par::for_each_chunk(&mut gx, g.h * g.w, |nc, gxp| {
            let (ni, ci) = (nc / g.c, nc % g.c);
            for fi in 0..g.f {
                let gp = &gout[(ni * g.f + fi) * plane..][..plane];
                for ki in 0..g.kh {
                    for kj in 0..g.kw {
                        let wv = wd[((ci * g.f + fi) * g.kh + ki) * g.kw + kj];
                        for iy in 0..g.h {
                            let grow = &gp[(iy * g.stride + ki) * g.ow..][..g.ow];
                            let xrow = &mut gxp[iy * g.w..][..g.w];
                            for ix in 0..g.w {
                                xrow[ix] += wv * grow[ix * g.stride + kj];
                            }
                        }
                    }
                }
            }
        });
        gx
    });

    let gw = needs[1].then(|| {
        let mut gw = vec![0.0; wd.len()];
        par::for_each_chunk(&mut gw, g.f * g.kh * g.kw, |ci, gwc| {
            for fi in 0..g.f {
                for ki in 0..g.kh {
                    for kj in 0..g.kw {
                        let mut acc = 0.0;
                        for ni in 0..g.n {
                            let gp = &gout[(ni * g.f + fi) * plane..][..plane];
                            let xp = &xd[(ni * g.c + ci) * g.h * g.w..][..g.h * g.w];
                            for iy in 0..g.h {
                                let grow = &gp[(iy * g.stride + ki) * g.ow..][..g.ow];
                                let xrow = &xp[iy * g.w..][..g.w];
                                for ix in 0..g.w {
                                    acc += xrow[ix] * grow[ix * g.stride + kj];
                                }
                            }
                        }
                        gwc[(fi * g.kh + ki) * g.kw + kj] = acc;
                    }
                }
            }
        });
        gw
    });

    let gb = needs[2].then(|| bias_grad(gout, g.n, g.f, plane));
    (gx, gw, gb)
}

impl Graph {
    /// Cross-correlation of `x` `[N,C,H,W]` with `w` `[F,C,kh,kw]`, zero padding `pad`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let out = conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Conv2d { stride, pad }, inputs))
    }

    /// Transposed convolution; `w` is `[C,F,kh,kw]` and the output is
    /// `[N, F, (H-1)*stride + kh, (W-1)*stride + kw]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let out = conv_transpose2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), stride)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::ConvTranspose2d { stride }, inputs))
    }
}
