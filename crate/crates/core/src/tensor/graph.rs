use super::{conv, elementwise, norm, pool, shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Backward rule plus whatever the forward pass saved for it.
#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Conv2d {
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        stride: usize,
    },
    BatchNorm {
        xhat: Vec<f64>,
        invstd: Vec<f64>,
        train: bool,
    },
    Relu,
    Sigmoid,
    Tanh,
    Softmax,
    MaxPool {
        argmax: Vec<usize>,
    },
    AvgPool {
        k: usize,
        stride: usize,
    },
    Dropout {
        scale: Vec<f64>,
    },
    Concat {
        channels: Vec<usize>,
    },
    SliceBatch {
        start: usize,
    },
    SliceChannels {
        start: usize,
    },
    Upsample {
        factor: usize,
    },
    Crop {
        top: usize,
        left: usize,
    },
    Add,
    Sub,
    Mul,
    Div,
    Scale(f64),
    AddScalar,
    Sum,
}

struct Node {
    value: Tensor,
    op: Op,
    inputs: Vec<Var>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Only leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            inputs: Vec::new(),
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.nodes[v.0].grad.take()
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, inputs: Vec<Var>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            inputs,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar `loss`. Leaf gradients accumulate additively
    /// across fan-out and are kept; interior gradients are released once used.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.nodes[loss.0].value.shape().to_vec();
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) || !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gout) = self.nodes[i].grad.take() else {
                continue;
            };
            let input_grads = self.input_grads(i, &gout);
            let inputs = self.nodes[i].inputs.clone();
            for (v, g) in inputs.into_iter().zip(input_grads) {
                let Some(g) = g else { continue };
                let node = &mut self.nodes[v.0];
                if !node.requires_grad {
                    continue;
                }
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    fn input_grads(&self, i: usize, gout: &[f64]) -> Vec<Option<Vec<f64>>> {
        let node = &self.nodes[i];
        let inp = |k: usize| &self.nodes[node.inputs[k].0].value;
        let needs = |k: usize| self.nodes[node.inputs[k].0].requires_grad;
        let out = &node.value;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d { stride, pad } => {
                let bias = node.inputs.len() == 3;
                let (gx, gw, gb) = conv::conv2d_backward(
                    inp(0),
                    inp(1),
                    gout,
                    *stride,
                    *pad,
                    [needs(0), needs(1), bias && needs(2)],
                );
                let mut v = vec![gx, gw];
                if bias {
                    v.push(gb);
                }
                v
            }
            Op::ConvTranspose2d { stride } => {
                let bias = node.inputs.len() == 3;
                let (gx, gw, gb) = conv::conv_transpose2d_backward(
                    inp(0),
                    inp(1),
                    gout,
                    *stride,
                    [needs(0), needs(1), bias && needs(2)],
                );
                let mut v = vec![gx, gw];
                if bias {
                    v.push(gb);
                }
                v
            }
            Op::BatchNorm {
                xhat,
                invstd,
                train,
            } => {
                let (gx, gg, gb) =
                    norm::batchnorm_backward(inp(0), inp(1), xhat, invstd, *train, gout);
                vec![Some(gx), Some(gg), Some(gb)]
            }
            Op::Relu => vec![Some(elementwise::relu_backward(inp(0), gout))],
            Op::Sigmoid => vec![Some(elementwise::sigmoid_backward(out, gout))],
            Op::Tanh => vec![Some(elementwise::tanh_backward(out, gout))],
            Op::Softmax => vec![Some(elementwise::softmax_backward(out, gout))],
            Op::MaxPool { argmax } => vec![Some(pool::maxpool_backward(inp(0), argmax, gout))],
            Op::AvgPool { k, stride } => {
                vec![Some(pool::avgpool_backward(inp(0), out, *k, *stride, gout))]
            }
            Op::Dropout { scale } => vec![Some(elementwise::dropout_backward(out, scale, gout))],
            Op::Concat { channels } => shape::concat_backward(out, channels, gout)
                .into_iter()
                .map(Some)
                .collect(),
            Op::SliceBatch { start } => {
                vec![Some(shape::slice_batch_backward(inp(0), *start, gout))]
            }
            Op::SliceChannels { start } => {
                vec![Some(shape::slice_channels_backward(inp(0), *start, gout))]
            }
            Op::Upsample { factor } => {
                vec![Some(shape::upsample_backward(inp(0), *factor, gout))]
            }
            Op::Crop { top, left } => {
                vec![Some(shape::crop_backward(inp(0), out, *top, *left, gout))]
            }
            Op::Add => vec![Some(gout.to_vec()), Some(gout.to_vec())],
            Op::Sub => vec![Some(gout.to_vec()), Some(gout.iter().map(|g| -g).collect())],
            Op::Mul => {
                let (a, b) = (inp(0).data(), inp(1).data());
                vec![
                    Some(gout.iter().zip(b).map(|(g, b)| g * b).collect()),
                    Some(gout.iter().zip(a).map(|(g, a)| g * a).collect()),
                ]
            }
            Op::Div => {
                let (a, b) = (inp(0).data(), inp(1).data());
                vec![
                    Some(gout.iter().zip(b).map(|(g, b)| g / b).collect()),
                    Some(
                        gout.iter()
                            .zip(a.iter().zip(b))
                            .map(|(g, (a, b))| -g * a / (b * b))
                            .collect(),
                    ),
                ]
            }
            Op::Scale(s) => vec![Some(gout.iter().map(|g| g * s).collect())],
            Op::AddScalar => vec![Some(gout.to_vec())],
            Op::Sum => vec![Some(vec![gout[0]; inp(0).numel()])],
        }
    }
}
