//! Finite-difference gradient suites shared by the gradient tests and the
//! acceptance run.

use msseg_core::gradcheck::check;
use msseg_core::model::{ModelConfig, SegNet};
use msseg_core::nn::{ConvBlock, ConvLstm, DenseBlock, DenseLayer, ParamDecl, SaBlock, Session, TransitionDown, TransitionUp};
use msseg_core::rng::Rng;
use msseg_core::tensor::{Graph, Mode, RunningStats, Tensor, Var, BN_EPS, BN_MOMENTUM};
use msseg_core::train::soft_dice_loss;
use msseg_core::Result;

use super::{block_gradcheck, random, BlockCheck, Probe};

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const MODEL_TOL: f64 = 1e-3;
pub const INSTANCES: u64 = 20;
pub const MODEL_PROBES: usize = 30;

#[derive(Clone, Debug)]
pub struct Suite {
    pub name: &'static str,
    pub instances: usize,
    pub worst: f64,
    pub probes: usize,
    /// Probes whose central differences never settled (kink within the step).
    pub skipped: usize,
    pub detail: String,
}

impl Suite {
    pub fn passed(&self) -> bool {
        self.worst < TOL && self.skipped * 20 <= self.probes
    }
}

type OpCase = Box<dyn Fn(&mut Rng) -> Result<(f64, usize)>>;

fn grad(inputs: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> Result<Var>) -> Result<(f64, usize)> {
    let r = check(inputs, f, H, None, 64)?;
    Ok((r.max_rel_err, r.checked))
}

fn positive(rng: &mut Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.uniform_range(0.5, 1.5))
}

fn op_cases() -> Vec<(&'static str, OpCase)> {
    let mut v: Vec<(&'static str, OpCase)> = Vec::new();
    v.push((
        "conv2d",
        Box::new(|rng| {
            let (c, f, k) = (rng.int_inclusive(1, 3), rng.int_inclusive(1, 3), [1, 3][rng.int_inclusive(0, 1)]);
            let (stride, pad) = (rng.int_inclusive(1, 2), rng.int_inclusive(0, 1));
            let x = random(rng, &[2, c, 5, 6]);
            let w = random(rng, &[f, c, k, k]);
            let b = random(rng, &[f]);
            grad(&[x, w, b], |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, pad))
        }),
    ));
    v.push((
        "conv_transpose2d",
        Box::new(|rng| {
            let (c, f) = (rng.int_inclusive(1, 3), rng.int_inclusive(1, 3));
            let (k, stride) = (rng.int_inclusive(1, 3), rng.int_inclusive(1, 2));
            let x = random(rng, &[2, c, 3, 4]);
            let w = random(rng, &[c, f, k, k]);
            let b = random(rng, &[f]);
            grad(&[x, w, b], |g, v| g.conv_transpose2d(v[0], v[1], Some(v[2]), stride))
        }),
    ));
    for (name, mode) in [("batchnorm (train)", Mode::Train), ("batchnorm (eval)", Mode::Eval)] {
        v.push((
            name,
            Box::new(move |rng| {
                let c = rng.int_inclusive(1, 3);
                let x = Tensor::from_fn(&[2, c, 3, 3], |_| rng.uniform_range(-2.0, 2.0));
                let gamma = random(rng, &[c]);
                let beta = random(rng, &[c]);
                let stats = RunningStats {
                    mean: (0..c).map(|_| rng.uniform_range(-0.5, 0.5)).collect(),
                    var: (0..c).map(|_| rng.uniform_range(0.5, 2.0)).collect(),
                };
                grad(&[x, gamma, beta], |g, v| {
                    let mut s = stats.clone();
                    g.batchnorm2d(v[0], v[1], v[2], mode, Some(&mut s), BN_EPS, BN_MOMENTUM)
                })
            }),
        ));
    }
    v.push(("relu", Box::new(|rng| grad(&[random(rng, &[2, 2, 3, 3])], |g, v| Ok(g.relu(v[0]))))));
    v.push((
        "sigmoid",
        Box::new(|rng| {
            let x = Tensor::from_fn(&[2, 2, 3, 3], |_| rng.uniform_range(-4.0, 4.0));
            grad(&[x], |g, v| Ok(g.sigmoid(v[0])))
        }),
    ));
    v.push((
        "tanh",
        Box::new(|rng| {
            let x = Tensor::from_fn(&[2, 2, 3, 3], |_| rng.uniform_range(-3.0, 3.0));
            grad(&[x], |g, v| Ok(g.tanh(v[0])))
        }),
    ));
    v.push((
        "softmax",
        Box::new(|rng| {
            let k = rng.int_inclusive(2, 4);
            let x = Tensor::from_fn(&[2, k, 3, 3], |_| rng.uniform_range(-3.0, 3.0));
            grad(&[x], |g, v| g.softmax_channels(v[0]))
        }),
    ));
    v.push((
        "maxpool",
        Box::new(|rng| {
            // well-separated values keep every window's maximum unique under +-h
            let mut vals: Vec<f64> = (0..144).map(|i| i as f64 / 72.0 - 1.0).collect();
            rng.shuffle(&mut vals);
            let x = Tensor::new(vec![2, 2, 6, 6], vals)?;
            let k = rng.int_inclusive(2, 3);
            grad(&[x], |g, v| g.maxpool2d(v[0], k, k))
        }),
    ));
    v.push((
        "avgpool",
        Box::new(|rng| {
            let x = random(rng, &[2, 2, 6, 6]);
            let (k, s) = (rng.int_inclusive(1, 3), rng.int_inclusive(1, 3));
            grad(&[x], |g, v| g.avgpool2d(v[0], k, s))
        }),
    ));
    v.push((
        "dropout2d",
        Box::new(|rng| {
            let x = random(rng, &[2, 4, 3, 3]);
            let seed = rng.next_u64();
            grad(&[x], |g, v| g.dropout2d(v[0], 0.4, Mode::Train, &mut Rng::new(seed)))
        }),
    ));
    v.push((
        "concat",
        Box::new(|rng| {
            let (a, b) = (rng.int_inclusive(1, 3), rng.int_inclusive(1, 3));
            let x = random(rng, &[2, a, 3, 3]);
            let y = random(rng, &[2, b, 3, 3]);
            grad(&[x, y], |g, v| g.concat_channels(&[v[0], v[1], v[0]]))
        }),
    ));
    v.push((
        "slice_batch",
        Box::new(|rng| {
            let x = random(rng, &[4, 2, 3, 3]);
            let start = rng.int_inclusive(0, 2);
            grad(&[x], |g, v| g.slice_batch(v[0], start, 2))
        }),
    ));
    v.push((
        "slice_channels",
        Box::new(|rng| {
            let x = random(rng, &[2, 4, 3, 3]);
            let start = rng.int_inclusive(0, 2);
            grad(&[x], |g, v| g.slice_channels(v[0], start, 2))
        }),
    ));
    v.push((
        "upsample",
        Box::new(|rng| {
            let x = random(rng, &[2, 2, 3, 2]);
            let f = rng.int_inclusive(1, 3);
            grad(&[x], |g, v| g.upsample_nearest(v[0], f))
        }),
    ));
    v.push((
        "crop",
        Box::new(|rng| {
            let x = random(rng, &[2, 2, 5, 6]);
            let (t, l) = (rng.int_inclusive(0, 2), rng.int_inclusive(0, 3));
            grad(&[x], |g, v| g.crop_spatial(v[0], t, l, 3, 3))
        }),
    ));
    v.push((
        "add/sub",
        Box::new(|rng| {
            let (a, b) = (random(rng, &[2, 2, 3, 3]), random(rng, &[2, 2, 3, 3]));
            grad(&[a, b], |g, v| {
                let s = g.add(v[0], v[1])?;
                let d = g.sub(s, v[1])?;
                let z = g.sub(d, v[0])?;
                let y = g.mul(s, d)?;
                g.add(z, y)
            })
        }),
    ));
    v.push((
        "mul",
        Box::new(|rng| {
            let (a, b) = (random(rng, &[2, 2, 3, 3]), random(rng, &[2, 2, 3, 3]));
            grad(&[a, b], |g, v| g.mul(v[0], v[1]))
        }),
    ));
    v.push((
        "div",
        Box::new(|rng| {
            let (a, b) = (random(rng, &[2, 2, 3, 3]), positive(rng, &[2, 2, 3, 3]));
            grad(&[a, b], |g, v| g.div(v[0], v[1]))
        }),
    ));
    v.push((
        "scale/add_scalar/sum",
        Box::new(|rng| {
            let a = random(rng, &[2, 2, 3, 3]);
            let (s, c) = (rng.uniform_range(-2.0, 2.0), rng.uniform_range(-2.0, 2.0));
            grad(&[a], |g, v| {
                let y = g.scale(v[0], s);
                let y = g.add_scalar(y, c);
                let y = g.mul(y, y)?;
                Ok(g.sum(y))
            })
        }),
    ));
    v.push((
        "soft_dice_loss",
        Box::new(|rng| {
            let logits = random(rng, &[2, 2, 8, 8]);
            let gt = Tensor::from_fn(&[2, 1, 8, 8], |_| f64::from(u8::from(rng.uniform() < 0.3)));
            grad(&[logits], |g, v| {
                let p = g.softmax_channels(v[0])?;
                soft_dice_loss(g, p, &gt, 1e-6)
            })
        }),
    ));
    v
}

/// Runs every op suite over `INSTANCES` random instances.
pub fn op_suites() -> Vec<Suite> {
    op_cases()
        .into_iter()
        .map(|(name, case)| {
            let (mut worst, mut probes) = (0.0f64, 0);
            for seed in 0..INSTANCES {
                let (err, n) = case(&mut Rng::new(1000 + seed)).unwrap();
                worst = worst.max(err);
                probes += n;
            }
            Suite {
                name,
                instances: INSTANCES as usize,
                worst,
                probes,
                skipped: 0,
                detail: String::new(),
            }
        })
        .collect()
}

type Forward = Box<dyn Fn(&mut Session, Var) -> Result<Var>>;
type BlockCase = Box<dyn Fn(&mut Rng) -> (Vec<ParamDecl>, Tensor, Forward)>;

fn block_cases() -> Vec<(&'static str, BlockCase)> {
    let mut v: Vec<(&'static str, BlockCase)> = Vec::new();
    v.push((
        "dense_layer",
        Box::new(|rng| {
            let c = rng.int_inclusive(1, 3);
            let layer = DenseLayer {
                in_ch: c,
                growth: 2,
                dropout_p: 0.2,
            };
            let mut d = Vec::new();
            layer.declare("l", &mut d);
            (d, random(rng, &[2, c, 4, 4]), Box::new(move |s, x| layer.forward(s, "l", x)))
        }),
    ));
    v.push((
        "dense_block",
        Box::new(|rng| {
            let c = rng.int_inclusive(1, 3);
            let block = DenseBlock::new(c, 2, 2, 0.2);
            let mut d = Vec::new();
            block.declare("b", &mut d);
            (d, random(rng, &[2, c, 4, 4]), Box::new(move |s, x| block.forward(s, "b", x)))
        }),
    ));
    v.push((
        "transition_down",
        Box::new(|rng| {
            let c = rng.int_inclusive(1, 3);
            let td = TransitionDown { ch: c, dropout_p: 0.2 };
            let mut d = Vec::new();
            td.declare("td", &mut d);
            (d, random(rng, &[2, c, 4, 4]), Box::new(move |s, x| td.forward(s, "td", x)))
        }),
    ));
    v.push((
        "transition_up",
        Box::new(|rng| {
            let c = rng.int_inclusive(1, 3);
            let tu = TransitionUp { ch: c };
            let mut d = Vec::new();
            tu.declare("tu", &mut d);
            (d, random(rng, &[2, c, 3, 2]), Box::new(move |s, x| tu.forward(s, "tu", x)))
        }),
    ));
    v.push((
        "conv_block",
        Box::new(|rng| {
            let (ci, co) = (rng.int_inclusive(1, 3), rng.int_inclusive(1, 3));
            let cb = ConvBlock { in_ch: ci, out_ch: co };
            let mut d = Vec::new();
            cb.declare("cb", &mut d);
            (d, random(rng, &[2, ci, 3, 3]), Box::new(move |s, x| cb.forward(s, "cb", x)))
        }),
    ));
    v.push((
        "sa_block",
        Box::new(|rng| {
            let c = rng.int_inclusive(1, 3);
            let sa = SaBlock::new(c);
            let mut d = Vec::new();
            sa.declare("sa", &mut d);
            (d, random(rng, &[2, c, 4, 4]), Box::new(move |s, x| sa.forward(s, "sa", x)))
        }),
    ));
    v.push((
        "convlstm",
        Box::new(|rng| {
            let (c, hdim) = (rng.int_inclusive(1, 2), rng.int_inclusive(1, 3));
            let lstm = ConvLstm { in_ch: c, hidden: hdim };
            let mut d = Vec::new();
            lstm.declare("lstm", &mut d);
            let f = move |s: &mut Session, x: Var| {
                let seq = (0..3).map(|t| s.graph.slice_batch(x, t * 2, 2)).collect::<Result<Vec<_>>>()?;
                lstm.forward(s, "lstm", &seq)
            };
            (d, random(rng, &[6, c, 3, 3]), Box::new(f))
        }),
    ));
    v
}

/// Runs every composite block over `INSTANCES` random instances, probing the
/// input and a strided sample of each trainable tensor.
pub fn block_suites() -> Vec<Suite> {
    block_cases()
        .into_iter()
        .map(|(name, case)| {
            let mut suite = Suite {
                name,
                instances: INSTANCES as usize,
                worst: 0.0,
                probes: 0,
                skipped: 0,
                detail: String::new(),
            };
            for seed in 0..INSTANCES {
                let (decls, x, f) = case(&mut Rng::new(2000 + seed));
                let r = block_gradcheck(&decls, &x, 3000 + seed, Probe::PerTensor(6), f).unwrap();
                if r.worst >= suite.worst {
                    suite.worst = r.worst;
                    suite.detail = format!("{:?}", r.at);
                }
                suite.probes += r.probes;
                suite.skipped += r.skipped;
            }
            suite
        })
        .collect()
}

/// The miniature model on a two-triplet 16x16 batch, `MODEL_PROBES` sampled parameters.
pub fn model_check() -> BlockCheck {
    let net = SegNet::new(&ModelConfig::miniature()).unwrap();
    let mut rng = Rng::new(77);
    let x = Tensor::from_fn(&[6, 1, 16, 16], |_| rng.uniform());
    block_gradcheck(&net.decls(), &x, 78, Probe::Random(MODEL_PROBES), |s, x| net.forward(s, x)).unwrap()
}
