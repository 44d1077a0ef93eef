use super::graph::{Graph, Mode, Op, Var};
use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect()).expect("same shape")
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn relu_backward(x: &Tensor, gout: &[f64]) -> Vec<f64> {
    x.data()
        .iter()
        .zip(gout)
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect()
}

pub(crate) fn sigmoid_backward(y: &Tensor, gout: &[f64]) -> Vec<f64> {
    y.data().iter().zip(gout).map(|(y, g)| g * y * (1.0 - y)).collect()
}

pub(crate) fn tanh_backward(y: &Tensor, gout: &[f64]) -> Vec<f64> {
    y.data().iter().zip(gout).map(|(y, g)| g * (1.0 - y * y)).collect()
}

pub(crate) fn softmax_forward(x: &Tensor) -> Result<Tensor> {
    let (n, k, h, w) = x.dims4("softmax_channels")?;
    if k < 2 {
        return Err(Error::shape("softmax_channels", format!("need at least 2 channels, got {k}")));
    }
    let plane = h * w;
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for ni in 0..n {
        let base = ni * k * plane;
        for p in 0..plane {
            let at = |c: usize| base + c * plane + p;
            let m = (0..k).map(|c| xd[at(c)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..k {
                let e = (xd[at(c)] - m).exp();
                out[at(c)] = e;
                z += e;
            }
            for c in 0..k {
                out[at(c)] /= z;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub(crate) fn softmax_backward(y: &Tensor, gout: &[f64]) -> Vec<f64> {
    let (n, k, h, w) = y.dims4("softmax_channels").expect("checked");
    let plane = h * w;
    let yd = y.data();
    let mut gx = vec![0.0; yd.len()];
    for ni in 0..n {
        let base = ni * k * plane;
        for p in 0..plane {
            let at = |c: usize| base + c * plane + p;
            let dot: f64 = (0..k).map(|c| gout[at(c)] * yd[at(c)]).sum();
            for c in 0..k {
                gx[at(c)] = yd[at(c)] * (gout[at(c)] - dot);
            }
        }
    }
    gx
}

pub(crate) fn dropout_backward(y: &Tensor, scale: &[f64], gout: &[f64]) -> Vec<f64> {
    let plane = y.numel() / scale.len();
    gout.chunks(plane)
        .zip(scale)
        .flat_map(|(g, &s)| g.iter().map(move |v| v * s))
        .collect()
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl Graph {
    pub fn relu(&mut self, x: Var) -> Var {
        let y = map(self.value(x), |v| v.max(0.0));
        self.push(y, Op::Relu, vec![x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = map(self.value(x), sigmoid);
        self.push(y, Op::Sigmoid, vec![x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = map(self.value(x), f64::tanh);
        self.push(y, Op::Tanh, vec![x])
    }

    /// Per-pixel softmax over the channel axis of `[N,K,H,W]`.
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let y = softmax_forward(self.value(x))?;
        Ok(self.push(y, Op::Softmax, vec![x]))
    }

    /// Channel dropout: in train mode each `(n, c)` plane is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`. Identity in eval
    /// mode or when `p == 0`, and then `rng` is not advanced.
    pub fn dropout2d(&mut self, x: Var, p: f64, mode: Mode, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid("dropout2d", format!("p must be in [0, 1), got {p}")));
        }
        let (n, c, _, _) = self.value(x).dims4("dropout2d")?;
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let scale: Vec<f64> = (0..n * c)
            .map(|_| if rng.uniform() < p { 0.0 } else { keep })
            .collect();
        let xv = self.value(x);
        let y = Tensor::new(xv.shape().to_vec(), dropout_backward(xv, &scale, xv.data()))?;
        Ok(self.push(y, Op::Dropout { scale }, vec![x]))
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, node: Op) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(op, av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let y = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(y, node, vec![a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let y = map(self.value(x), |v| v * s);
        self.push(y, Op::Scale(s), vec![x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let y = map(self.value(x), |v| v + c);
        self.push(y, Op::AddScalar, vec![x])
    }

    /// Sum of all elements as a shape-`[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum, vec![x])
    }
}
