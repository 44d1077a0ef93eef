use super::{Init, ParamDecl, Session};
use crate::error::{Error, Result};
use crate::tensor::{ParamKind, Var};

fn trainable(name: String, shape: Vec<usize>, init: Init) -> ParamDecl {
    ParamDecl {
        name,
        shape,
        init,
        kind: ParamKind::Trainable,
    }
}

fn channels(s: &Session, x: Var, op: &'static str) -> Result<usize> {
    Ok(s.graph.value(x).dims4(op)?.1)
}

fn expect_channels(s: &Session, x: Var, want: usize, op: &'static str) -> Result<()> {
    let got = channels(s, x, op)?;
    if got != want {
        return Err(Error::shape(op, format!("expected {want} input channels, got {got}")));
    }
    Ok(())
}

/// Square-kernel convolution with bias; `{prefix}.weight` / `{prefix}.bias`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
}

impl Conv {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        Conv { in_ch, out_ch, kernel }
    }

    pub fn declare(&self, prefix: &str, out: &mut Vec<ParamDecl>) {
        let k = self.kernel;
        out.push(trainable(
            format!("{prefix}.weight"),
            vec![self.out_ch, self.in_ch, k, k],
            Init::HeUniform { fan_in: self.in_ch * k * k },
        ));
        out.push(trainable(format!("{prefix}.bias"), vec![self.out_ch], Init::Const(0.0)));
    }

    /// Stride 1, "same" padding for odd kernels.
    pub fn forward(&self, s: &mut Session, prefix: &str, x: Var) -> Result<Var> {
        let w = s.param(&format!("{prefix}.weight"))?;
        let b = s.param(&format!("{prefix}.bias"))?;
        s.graph.conv2d(x, w, Some(b), 1, self.kernel / 2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchNorm {
    pub ch: usize,
}

impl BatchNorm {
    pub fn declare(&self, prefix: &str, out: &mut Vec<ParamDecl>) {
        out.push(trainable(format!("{prefix}.gamma"), vec![self.ch], Init::Const(1.0)));
        out.push(trainable(format!("{prefix}.beta"), vec![self.ch], Init::Const(0.0)));
        for (suffix, v) in [("running_mean", 0.0), ("running_var", 1.0)] {
            out.push(ParamDecl {
                name: format!("{prefix}.{suffix}"),
                shape: vec![self.ch],
                init: Init::Const(v),
                kind: ParamKind::Buffer,
            });
        }
    }
}

/// BN -> ReLU -> 3x3 conv (`in_ch -> growth`) -> Dropout2d.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DenseLayer {
    pub in_ch: usize,
    pub growth: usize,
    pub dropout_p: f64,
}

impl DenseLayer {
    fn conv(&self) -> Conv {
        Conv::new(self.in_ch, self.growth, 3)
    }

    pub fn declare(&self, prefix: &str, out: &mut Vec<ParamDecl>) {
        BatchNorm { ch: self.in_ch }.declare(&format!("{prefix}.bn"), out);
        self.conv().declare(&format!("{prefix}.conv"), out);
    }

    pub fn forward(&self, s: &mut Session, prefix: &str, x: Var) -> Result<Var> {
        expect_channels(s, x, self.in_ch, "dense_layer")?;
        let y = s.batchnorm(&format!("{prefix}.bn"), x)?;
        let y = s.graph.relu(y);
        let y = self.conv().forward(s, &format!("{prefix}.conv"), y)?;
        s.dropout(y, self.dropout_p)
    }
}

/// Densely connected stack; the output is the concatenation of the layer
/// outputs only (`layers * growth` channels), not the block input.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseBlock {
    layers: Vec<DenseLayer>,
}

impl DenseBlock {
    pub fn new(in_ch: usize, growth: usize, layers: usize, dropout_p: f64) -> Self {
        DenseBlock {
            layers: (0..layers)
                .map(|i| DenseLayer {
                    in_ch: in_ch + i * growth,
                    growth,
                    dropout_p,
                })
                .collect(),
        }
    }

    /// Validates that layer `i` consumes `in_ch + i * growth` channels.
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(Error::Config("dense block needs at least one layer".into()));
        };
        let (base, growth) = (first.in_ch, first.growth);
        for (i, l) in layers.iter().enumerate() {
            if l.growth != growth || l.in_ch != base + i * growth {
                return Err(Error::Config(format!(
                    "dense layer {i}: expected {} -> {growth} channels, got {} -> {}",
                    base + i * growth,
                    l.in_ch,
                    l.growth
                )));
            }
        }
        Ok(DenseBlock { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn in_ch(&self) -> usize {
        self.layers[0].in_ch
    }

    pub fn out_ch(&self) -> usize {
        self.layers.len() * self.layers[0].growth
    }

    pub fn declare(&self, prefix: &str, out: &mut Vec<ParamDecl>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.declare(&format!("{prefix}.layer{i}"), out);
        }
    }

    pub fn forward(&self, s: &mut Session, prefix: &str, x: Var) -> Result<Var> {
        expect_channels(s, x, self.in_ch(), "dense_block")?;
        let mut feats = vec![x];
        for (i, l) in self.layers.iter().enumerate() {
            let inp = s.graph.concat_channels(&feats)?;
            let y = l.forward(s, &format!("{prefix}.layer{i}"), inp)?;
            feats.push(y);
        }
        s.graph.concat_channels(&feats[1..])
    }
}

/// BN -> ReLU -> 1x1 conv (channel preserving) -> Dropout2d -> 2x2 max-pool.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransitionDown {
    pub ch: usize,
    pub dropout_p: f64,
}

impl TransitionDown {
    fn conv(&self) -> Conv {
        Conv::new(self.ch, self.ch, 1)
    }

    pub fn declare(&self, prefix: &str, out: &mut Vec<ParamDecl>) {
        BatchNorm { ch: self.ch }.declare(&format!("{prefix}.bn"), out);
        self.conv().declare(&format!("{prefix}.conv"), out);
    }

    pub fn forward(&self, s: &mut Session, prefix: &str, x: Var) -> Result<Var> {
        let (_, c, h, w) = s.graph.value(x).dims4("transition_down")?;
        if h < 2 || w < 2 {
            return Err(Error::shape("transition_down", format!("spatial extent {h}x{w} < 2")));
        }
        if c != self.ch {
            return Err(Error::shape("transition_down", format!("expected {} channels, got {c}", self.ch)));
        }
        let y = s.batchnorm(&format!("{prefix}.bn"), x)?;
        let y = s.graph.relu(y);
        let y = self.conv().forward(s, &format!("{prefix}.conv"), y)?;
        let y = s.dropout(y, self.dropout_p)?;
        s.graph.maxpool2d(y, 2, 2)
    }
}

/// 3x3 stride-2 transposed conv, cropped to exactly twice the input size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransitionUp {
    pub ch: usize,
}

impl TransitionUp {
    pub fn declare(&self, prefix: &str, out: &mut Vec<ParamDecl>) {
        out.push(trainable(
            format!("{prefix}.weight"),
            vec![self.ch, self.ch, 3, 3],
            Init::HeUniform { fan_in: self.ch * 9 },
        ));
        out.push(trainable(format!("{prefix}.bias"), vec![self.ch], Init::Const(0.0)));
    }

    pub fn forward(&self, s: &mut Session, prefix: &str, x: Var) -> Result<Var> {
        let (_, _, h, w) = s.graph.value(x).dims4("transition_up")?;
        let wt = s.param(&format!("{prefix}.weight"))?;
        let b = s.param(&format!("{prefix}.bias"))?;
        let y = s.graph.conv_transpose2d(x, wt, Some(b), 2)?;
        let (_, _, oh, ow) = s.graph.value(y).dims4("transition_up")?;
        // (h-1)*2 + 3 = 2h + 1, so one surplus row/column to drop
        s.graph.crop_spatial(y, (oh - 2 * h) / 2, (ow - 2 * w) / 2, 2 * h, 2 * w)
    }
}

/// Two (3x3 conv -> BN -> ReLU) stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvBlock {
    pub in_ch: usize,
    pub out_ch: usize,
}

impl ConvBlock {
    pub fn declare(&self, prefix: &str, out: &mut Vec<ParamDecl>) {
        Conv::new(self.in_ch, self.out_ch, 3).declare(&format!("{prefix}.conv1"), out);
        BatchNorm { ch: self.out_ch }.declare(&format!("{prefix}.bn1"), out);
        Conv::new(self.out_ch, self.out_ch, 3).declare(&format!("{prefix}.conv2"), out);
        BatchNorm { ch: self.out_ch }.declare(&format!("{prefix}.bn2"), out);
    }

    pub fn forward(&self, s: &mut Session, prefix: &str, x: Var) -> Result<Var> {
        expect_channels(s, x, self.in_ch, "conv_block")?;
        let y = Conv::new(self.in_ch, self.out_ch, 3).forward(s, &format!("{prefix}.conv1"), x)?;
        let y = s.batchnorm(&format!("{prefix}.bn1"), y)?;
        let y = s.graph.relu(y);
        let y = Conv::new(self.out_ch, self.out_ch, 3).forward(s, &format!("{prefix}.conv2"), y)?;
        let y = s.batchnorm(&format!("{prefix}.bn2"), y)?;
        Ok(s.graph.relu(y))
    }
}

/// Squeeze-and-attention: `a = up(conv_block2(conv_block1(avgpool(x))))`,
/// output `x * a + a`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SaBlock {
    pub ch: usize,
    pub pool_k: usize,
}

impl SaBlock {
    pub fn new(ch: usize) -> Self {
        SaBlock { ch, pool_k: 2 }
    }

    fn blocks(&self) -> [ConvBlock; 2] {
        let cb = ConvBlock {
            in_ch: self.ch,
            out_ch: self.ch,
        };
        [cb, cb]
    }

    pub fn declare(&self, prefix: &str, out: &mut Vec<ParamDecl>) {
        let [a, b] = self.blocks();
        a.declare(&format!("{prefix}.attn1"), out);
        b.declare(&format!("{prefix}.attn2"), out);
    }

    /// The upsampled attention map `a`.
    pub fn attention(&self, s: &mut Session, prefix: &str, x: Var) -> Result<Var> {
        let (_, c, h, w) = s.graph.value(x).dims4("sa_block")?;
        if c != self.ch {
            return Err(Error::shape("sa_block", format!("expected {} channels, got {c}", self.ch)));
        }
        if h % self.pool_k != 0 || w % self.pool_k != 0 {
            return Err(Error::shape(
                "sa_block",
                format!("spatial extent {h}x{w} not divisible by pool size {}", self.pool_k),
            ));
        }
        let [a, b] = self.blocks();
        let p = s.graph.avgpool2d(x, self.pool_k, self.pool_k)?;
        let p = a.forward(s, &format!("{prefix}.attn1"), p)?;
        let p = b.forward(s, &format!("{prefix}.attn2"), p)?;
        s.graph.upsample_nearest(p, self.pool_k)
    }

    pub fn forward(&self, s: &mut Session, prefix: &str, x: Var) -> Result<Var> {
        let a = self.attention(s, prefix, x)?;
        let xa = s.graph.mul(x, a)?;
        s.graph.add(xa, a)
    }
}
