#![allow(dead_code)]

pub mod grads;

use msseg_core::nn::{materialize, ParamDecl, Session};
use msseg_core::rng::Rng;
use msseg_core::tensor::{Mode, ParamKind, ParamStore, Tensor, Var};
use msseg_core::Result;

pub fn random(rng: &mut Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.uniform_range(-1.0, 1.0))
}

pub fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

/// Reference 2-D cross-correlation with zero padding, one scalar at a time.
pub fn conv2d_ref(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (f, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * f * oh * ow];
    for ni in 0..n {
        for fi in 0..f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b.data()[fi]);
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((ni * c + ci) * h + iy as usize) * wd + ix as usize];
                                acc += xv * w.data()[((fi * c + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((ni * f + fi) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, f, oh, ow], out).unwrap()
}

/// Reference transposed convolution: scatter every input pixel through the kernel.
pub fn conv_transpose2d_ref(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize) -> Tensor {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (f, kh, kw) = (w.shape()[1], w.shape()[2], w.shape()[3]);
    let (oh, ow) = ((h - 1) * stride + kh, (wd - 1) * stride + kw);
    let mut out = vec![0.0; n * f * oh * ow];
    for ni in 0..n {
        for fi in 0..f {
            for i in 0..oh * ow {
                out[(ni * f + fi) * oh * ow + i] = b.map_or(0.0, |b| b.data()[fi]);
            }
        }
        for ci in 0..c {
            for y in 0..h {
                for xx in 0..wd {
                    let v = x.data()[((ni * c + ci) * h + y) * wd + xx];
                    for fi in 0..f {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let o = ((ni * f + fi) * oh + y * stride + ky) * ow + xx * stride + kx;
                                out[o] += v * w.data()[((ci * f + fi) * kh + ky) * kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, f, oh, ow], out).unwrap()
}

/// Reference pooling; `max` picks the first maximum in row-major window order.
pub fn pool_ref(x: &Tensor, k: usize, stride: usize, max: bool) -> Tensor {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = ((h - k) / stride + 1, (w - k) / stride + 1);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let window: Vec<f64> = (0..k * k)
                    .map(|i| x.data()[(p * h + oy * stride + i / k) * w + ox * stride + i % k])
                    .collect();
                out.push(if max {
                    window.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                } else {
                    window.iter().sum::<f64>() / (k * k) as f64
                });
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out).unwrap()
}

/// Reference batchnorm: per-channel statistics gathered by explicit loops.
/// Returns the output and, in train mode, the updated running (mean, var).
pub fn batchnorm_ref(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    train: bool,
    running: (&[f64], &[f64]),
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let m = (n * h * w) as f64;
    let mut out = vec![0.0; x.numel()];
    let (mut rm, mut rv) = (running.0.to_vec(), running.1.to_vec());
    for ci in 0..c {
        let vals: Vec<f64> = (0..n)
            .flat_map(|ni| (0..h * w).map(move |i| (ni, i)))
            .map(|(ni, i)| x.data()[(ni * c + ci) * h * w + i])
            .collect();
        let (mean, var) = if train {
            let mean = vals.iter().sum::<f64>() / m;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
            rm[ci] = 0.9 * rm[ci] + 0.1 * mean;
            rv[ci] = 0.9 * rv[ci] + 0.1 * var * m / (m - 1.0);
            (mean, var)
        } else {
            (running.0[ci], running.1[ci])
        };
        for ni in 0..n {
            for i in 0..h * w {
                let idx = (ni * c + ci) * h * w + i;
                out[idx] = gamma[ci] * (x.data()[idx] - mean) / (var + 1e-5).sqrt() + beta[ci];
            }
        }
    }
    (Tensor::new(x.shape().to_vec(), out).unwrap(), rm, rv)
}

/// Finite-difference check of a session-based block against its own
/// backward pass, over the input and a strided sample of every trainable
/// parameter.
///
/// Each probe takes central differences at `h`, `h / 10`, ... until two
/// successive steps agree; disagreement means a ReLU or max-pool kink lies
/// within the step. A probe that never settles is skipped. A wrong backward
/// pass still shows up as consistent differences that miss the analytic value.
#[derive(Clone, Copy)]
pub enum Probe {
    /// The input plus up to `n` strided elements of every trainable tensor.
    PerTensor(usize),
    /// `n` elements drawn at random across the trainable tensors (input skipped).
    Random(usize),
}

/// Central differences on a whole block carry roundoff near `eps * |L| / h`,
/// so gradients below this floor are compared absolutely.
const BLOCK_FLOOR: f64 = 1e-4;

fn block_rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(BLOCK_FLOOR)
}

#[derive(Clone, Debug)]
pub struct BlockCheck {
    pub worst: f64,
    pub probes: usize,
    pub skipped: usize,
    /// `(tensor, element, analytic, numeric)` at the worst probe.
    pub at: (String, usize, f64, f64),
}

pub fn block_gradcheck<F>(decls: &[ParamDecl], x: &Tensor, seed: u64, probe: Probe, forward: F) -> Result<BlockCheck>
where
    F: Fn(&mut Session, Var) -> Result<Var>,
{
    let mut rng = Rng::new(seed);
    let mut store = materialize(decls, &mut rng)?;
    for (name, p) in store.iter().map(|(n, p)| (n.to_string(), p.clone())).collect::<Vec<_>>() {
        if p.kind == ParamKind::Trainable && (name.ends_with("bias") || name.ends_with("beta")) {
            *store.get_mut(&name)? = random(&mut rng, p.value.shape());
        }
    }
    let weights = {
        let mut s = Session::new(&store, Mode::Train, Rng::new(seed ^ 1));
        let xv = s.graph.param(x.clone());
        let out = forward(&mut s, xv)?;
        let shape = s.graph.shape(out).to_vec();
        let mut wr = Rng::new(seed ^ 2);
        Tensor::from_fn(&shape, |_| wr.uniform_range(-1.0, 1.0))
    };
    let loss = |store: &ParamStore, x: &Tensor, keep: bool| -> Result<(f64, Option<(Vec<f64>, Vec<(String, Vec<f64>)>)>)> {
        let mut s = Session::new(store, Mode::Train, Rng::new(seed ^ 1));
        let xv = s.graph.param(x.clone());
        let out = forward(&mut s, xv)?;
        let wv = s.graph.constant(weights.clone());
        let prod = s.graph.mul(out, wv)?;
        let l = s.graph.sum(prod);
        let value = s.graph.value(l).data()[0];
        if !keep {
            return Ok((value, None));
        }
        s.backward(l)?;
        let gx = s.graph.grad(xv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.numel()]);
        let grads = s.finish().grads;
        Ok((value, Some((gx, grads))))
    };
    let (_, Some((gx, grads))) = loss(&store, x, true)? else { unreachable!() };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut probes = 0;
    let mut skipped = 0;
    let mut worst_at = (String::new(), 0, 0.0, 0.0);
    let mut fd = |name: Option<&str>, e: usize, analytic: f64, store: &mut ParamStore| -> Result<()> {
        let mut xp = x.clone();
        let orig = match name {
            Some(n) => store.get(n)?.data()[e],
            None => x.data()[e],
        };
        let mut at = |v: f64, store: &mut ParamStore| -> Result<f64> {
            match name {
                Some(n) => store.get_mut(n)?.data_mut()[e] = v,
                None => xp.data_mut()[e] = v,
            }
            Ok(loss(store, &xp, false)?.0)
        };
        let mut central = |h: f64, store: &mut ParamStore| -> Result<f64> {
            let up = at(orig + h, store)?;
            let down = at(orig - h, store)?;
            Ok((up - down) / (2.0 * h))
        };
        // refine until two successive step sizes agree
        let mut step = h;
        let mut prev = central(step, store)?;
        let mut settled = None;
        for _ in 0..3 {
            step /= 10.0;
            let next = central(step, store)?;
            if (prev - next).abs() <= 1e-4 * prev.abs().max(next.abs()).max(1e-3) {
                settled = Some(next);
                break;
            }
            prev = next;
        }
        at(orig, store)?;
        probes += 1;
        match settled {
            None => skipped += 1,
            Some(numeric) if block_rel_err(analytic, numeric) > worst => {
                worst = block_rel_err(analytic, numeric);
                worst_at = (name.unwrap_or("input").to_string(), e, analytic, numeric);
            }
            Some(_) => {}
        }
        Ok(())
    };
    match probe {
        Probe::PerTensor(per_tensor) => {
            let stride = |n: usize| n.div_ceil(per_tensor).max(1);
            for e in (0..x.numel()).step_by(stride(x.numel())) {
                fd(None, e, gx[e], &mut store)?;
            }
            for (name, g) in &grads {
                for e in (0..g.len()).step_by(stride(g.len())) {
                    fd(Some(name), e, g[e], &mut store)?;
                }
            }
        }
        Probe::Random(n) => {
            let mut pick = Rng::new(seed ^ 3);
            for _ in 0..n {
                let (name, g) = &grads[pick.int_inclusive(0, grads.len() - 1)];
                let e = pick.int_inclusive(0, g.len() - 1);
                fd(Some(name), e, g[e], &mut store)?;
            }
        }
    }
    Ok(BlockCheck {
        worst,
        probes,
        skipped,
        at: worst_at,
    })
}

use msseg_core::metrics::{confusion_labels, ConfusionCounts};
use msseg_core::tensor::{Graph, RunningStats, BN_EPS, BN_MOMENTUM};

fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Worst absolute deviation of conv2d from the reference over random cases.
pub fn conv_oracle(cases: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (n, c, f) = (rng.int_inclusive(1, 2), rng.int_inclusive(1, 3), rng.int_inclusive(1, 3));
        let k = [1, 2, 3][rng.int_inclusive(0, 2)];
        let (stride, pad) = (rng.int_inclusive(1, 2), rng.int_inclusive(0, k / 2 + 1));
        let (h, w) = (rng.int_inclusive(k, 7), rng.int_inclusive(k, 7));
        let x = random(&mut rng, &[n, c, h, w]);
        let wt = random(&mut rng, &[f, c, k, k]);
        let b = (rng.uniform() < 0.5).then(|| random(&mut rng, &[f]));
        let mut g = Graph::new();
        let (xv, wv) = (g.constant(x.clone()), g.constant(wt.clone()));
        let bv = b.clone().map(|b| g.constant(b));
        let y = g.conv2d(xv, wv, bv, stride, pad).unwrap();
        worst = worst.max(max_diff(g.value(y), &conv2d_ref(&x, &wt, b.as_ref(), stride, pad)));
    }
    worst
}

pub fn conv_transpose_oracle(cases: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (n, c, f) = (rng.int_inclusive(1, 2), rng.int_inclusive(1, 3), rng.int_inclusive(1, 3));
        let (k, stride) = (rng.int_inclusive(1, 3), rng.int_inclusive(1, 3));
        let (h, w) = (rng.int_inclusive(1, 5), rng.int_inclusive(1, 5));
        let x = random(&mut rng, &[n, c, h, w]);
        let wt = random(&mut rng, &[c, f, k, k]);
        let b = (rng.uniform() < 0.5).then(|| random(&mut rng, &[f]));
        let mut g = Graph::new();
        let (xv, wv) = (g.constant(x.clone()), g.constant(wt.clone()));
        let bv = b.clone().map(|b| g.constant(b));
        let y = g.conv_transpose2d(xv, wv, bv, stride).unwrap();
        worst = worst.max(max_diff(g.value(y), &conv_transpose2d_ref(&x, &wt, b.as_ref(), stride)));
    }
    worst
}

/// Max and average pooling; half the cases draw from a small integer set so
/// that ties in the max occur often.
pub fn pool_oracle(cases: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    for i in 0..cases {
        let (n, c) = (rng.int_inclusive(1, 2), rng.int_inclusive(1, 3));
        let (k, stride) = (rng.int_inclusive(1, 3), rng.int_inclusive(1, 3));
        let (h, w) = (rng.int_inclusive(k, 8), rng.int_inclusive(k, 8));
        let x = if i % 2 == 0 {
            random(&mut rng, &[n, c, h, w])
        } else {
            Tensor::from_fn(&[n, c, h, w], |_| rng.int_inclusive(0, 2) as f64)
        };
        let mut g = Graph::new();
        let xv = g.param(x.clone());
        let mx = g.maxpool2d(xv, k, stride).unwrap();
        let av = g.avgpool2d(xv, k, stride).unwrap();
        worst = worst.max(max_diff(g.value(mx), &pool_ref(&x, k, stride, true)));
        worst = worst.max(max_diff(g.value(av), &pool_ref(&x, k, stride, false)));
    }
    worst
}

/// Train- and eval-mode batchnorm outputs plus the running-stat update.
pub fn batchnorm_oracle(cases: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (n, c) = (rng.int_inclusive(1, 3), rng.int_inclusive(1, 3));
        let (h, w) = (rng.int_inclusive(1, 5), rng.int_inclusive(2, 5));
        let x = Tensor::from_fn(&[n, c, h, w], |_| rng.uniform_range(-3.0, 3.0));
        let gamma = random(&mut rng, &[c]);
        let beta = random(&mut rng, &[c]);
        let rm: Vec<f64> = (0..c).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let rv: Vec<f64> = (0..c).map(|_| rng.uniform_range(0.5, 2.0)).collect();
        for mode in [Mode::Train, Mode::Eval] {
            let mut stats = RunningStats {
                mean: rm.clone(),
                var: rv.clone(),
            };
            let mut g = Graph::new();
            let (xv, gv, bv) = (g.constant(x.clone()), g.constant(gamma.clone()), g.constant(beta.clone()));
            let y = g.batchnorm2d(xv, gv, bv, mode, Some(&mut stats), BN_EPS, BN_MOMENTUM).unwrap();
            let (want, wm, wv) = batchnorm_ref(&x, gamma.data(), beta.data(), mode == Mode::Train, (&rm, &rv));
            worst = worst.max(max_diff(g.value(y), &want));
            for (a, b) in stats.mean.iter().zip(&wm).chain(stats.var.iter().zip(&wv)) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}

/// Number of random 16x16 label pairs whose counts differ from a per-voxel tally.
pub fn confusion_oracle(cases: usize, seed: u64) -> usize {
    let mut rng = Rng::new(seed);
    let mut mismatches = 0;
    for _ in 0..cases {
        let density = rng.uniform();
        let mut draw = || (0..256).map(|_| u8::from(rng.uniform() < density)).collect::<Vec<u8>>();
        let (pred, gt) = (draw(), draw());
        let mut want = ConfusionCounts::default();
        for i in 0..256 {
            if pred[i] == 1 && gt[i] == 1 {
                want.tp += 1;
            } else if pred[i] == 1 {
                want.fp += 1;
            } else if gt[i] == 1 {
                want.fn_ += 1;
            } else {
                want.tn += 1;
            }
        }
        if confusion_labels(&pred, &gt).unwrap() != want {
            mismatches += 1;
        }
    }
    mismatches
}

use msseg_core::data::{generate_phantom, normalize_intensity, Dims, FoldVolume, PhantomSpec};
use msseg_core::train::LabeledVolume;

/// Normalized phantom volumes of `slices x size x size`, seeds `first..first+count`.
pub fn phantom_set(first: u64, count: u64, slices: usize, size: usize) -> Vec<LabeledVolume> {
    (first..first + count)
        .map(|seed| {
            let spec = PhantomSpec {
                seed,
                dims: Dims::new(slices, size, size),
                n_lesions: (3, 5),
                lesion_radius: (2.0, 3.0),
                texture_amplitude: 0.1,
                blank_slices: 1,
            };
            let (v, m) = generate_phantom(&spec).unwrap();
            LabeledVolume::new(format!("ph{seed:02}"), normalize_intensity(&v).unwrap(), m).unwrap()
        })
        .collect()
}

/// Miniature configuration counts summed term by term: (full, plain).
pub fn miniature_hand_counts() -> (usize, usize) {
    // stem
    let stem = 80;
    // encoder scale 0: dense 8->12->16, SA on 16, TD 16
    let dense0 = (16 + 292) + (24 + 436);
    let sa16 = 4 * (2304 + 16 + 32);
    let td16 = 32 + 272;
    // encoder scale 1: dense 16->20->24, SA on 24, TD 24
    let dense1 = (32 + 580) + (40 + 724);
    let sa24 = 4 * (5184 + 24 + 48);
    let td24 = 48 + 600;
    // bottleneck dense 24->28->32 (emits 8), ConvLSTM 8+8 -> 8
    let bottleneck = (48 + 868) + (56 + 1012);
    let lstm = 4 * (8 * 16 * 9 + 8);
    // decoder: TU 8->8, dense on 8+24 then 8+16, SA on 8
    let tu = 8 * 8 * 9 + 8;
    let dec_dense0 = (64 + 1156) + (72 + 1300);
    let dec_dense1 = bottleneck;
    let sa8 = 4 * (576 + 8 + 16);
    let head = 16 + 2;

    let plain = stem + dense0 + td16 + dense1 + td24 + bottleneck + tu + dec_dense0 + tu + dec_dense1 + head;
    (plain + sa16 + sa24 + lstm + 2 * sa8, plain)
}

/// Five patients with 4/4/4/4/5 time points. Slice counts are chosen so the
/// first fold totals 1119 / 197 / 70.
pub fn isbi_shaped() -> Vec<FoldVolume> {
    let last = [70, 84, 67, 46, 50];
    let mut out = Vec::new();
    for (p, n) in [4u32, 4, 4, 4, 5].into_iter().enumerate() {
        for t in 1..=n {
            let slices = if t == n { last[p] } else { 0 };
            out.push(FoldVolume {
                id: format!("p{}t{t}", p + 1),
                patient: format!("{:02}", p + 1),
                timepoint: t,
                slices,
            });
        }
    }
    // fold 1 trains on the 16 earlier scans (64 + 15 x 67 = 1069) plus p5t5 (50)
    let mut k = 0;
    for v in out.iter_mut().filter(|v| v.slices == 0) {
        v.slices = if k == 0 { 64 } else { 67 };
        k += 1;
    }
    out
}
