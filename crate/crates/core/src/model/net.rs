use super::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{materialize, Conv, ConvLstm, DenseBlock, ParamDecl, SaBlock, Session, TransitionDown, TransitionUp};
use crate::rng::Rng;
use crate::tensor::{ParamKind, ParamStore, Var};

/// Slices per input sample: previous, center, next.
pub const SEQ_LEN: usize = 3;
const CENTER: usize = 1;

#[derive(Clone, Debug)]
struct EncoderStage {
    dense: DenseBlock,
    sa: Option<SaBlock>,
    td: TransitionDown,
}

#[derive(Clone, Debug)]
struct DecoderStage {
    tu: TransitionUp,
    dense: DenseBlock,
    sa: Option<SaBlock>,
}

/// Resolved layer plan for a [`ModelConfig`].
///
/// Encoder scale `i` runs dense block -> (SA) -> transition down; its skip
/// tensor is `concat(scale input, dense output)` taken before SA. The
/// bottleneck dense block feeds the ConvLSTM, which scans the three encoded
/// slices in order and hands its last hidden state to the decoder. Decoder
/// stage `k` (deepest first) runs transition up -> concat with the matching
/// center-slice skip -> dense block -> (SA). A 1x1 conv and a channel softmax
/// produce the class probabilities.
#[derive(Clone, Debug)]
pub struct SegNet {
    cfg: ModelConfig,
    stem: Conv,
    enc: Vec<EncoderStage>,
    bottleneck: DenseBlock,
    lstm: Option<ConvLstm>,
    dec: Vec<DecoderStage>,
    head: Conv,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BreakdownRow {
    pub position: &'static str,
    pub layer: &'static str,
    pub count: usize,
}

impl SegNet {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let (g, l, p) = (cfg.growth_rate, cfg.layers_per_dense_block, cfg.dropout_p);
        let stem = Conv::new(1, cfg.first_conv_filters, 3);
        let mut c = cfg.first_conv_filters;
        let mut enc = Vec::with_capacity(cfg.num_scales);
        let mut skips = Vec::with_capacity(cfg.num_scales);
        for _ in 0..cfg.num_scales {
            let dense = DenseBlock::new(c, g, l, p);
            let skip = c + dense.out_ch();
            enc.push(EncoderStage {
                dense,
                sa: cfg.use_sa.then(|| SaBlock::new(skip)),
                td: TransitionDown { ch: skip, dropout_p: p },
            });
            skips.push(skip);
            c = skip;
        }
        let bottleneck = DenseBlock::new(c, g, l, p);
        c = bottleneck.out_ch();
        let lstm = cfg.use_clstm.then_some(ConvLstm {
            in_ch: c,
            hidden: cfg.convlstm_hidden,
        });
        if let Some(lstm) = &lstm {
            c = lstm.hidden;
        }
        let mut dec = Vec::with_capacity(cfg.num_scales);
        for &skip in skips.iter().rev() {
            let tu = TransitionUp { ch: c };
            let dense = DenseBlock::new(c + skip, g, l, p);
            c = dense.out_ch();
            dec.push(DecoderStage {
                tu,
                dense,
                sa: cfg.use_sa.then(|| SaBlock::new(c)),
            });
        }
        Ok(SegNet {
            cfg: cfg.clone(),
            stem,
            enc,
            bottleneck,
            lstm,
            dec,
            head: Conv::new(c, cfg.num_classes, 1),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn decls(&self) -> Vec<ParamDecl> {
        let mut d = Vec::new();
        self.stem.declare("downsampling.stem", &mut d);
        for (i, st) in self.enc.iter().enumerate() {
            st.dense.declare(&format!("downsampling.{i}.dense"), &mut d);
            if let Some(sa) = &st.sa {
                sa.declare(&format!("downsampling.{i}.sa"), &mut d);
            }
            st.td.declare(&format!("downsampling.{i}.td"), &mut d);
        }
        self.bottleneck.declare("bottleneck.dense", &mut d);
        if let Some(lstm) = &self.lstm {
            lstm.declare("bottleneck.convlstm", &mut d);
        }
        for (k, st) in self.dec.iter().enumerate() {
            st.tu.declare(&format!("upsampling.{k}.tu"), &mut d);
            st.dense.declare(&format!("upsampling.{k}.dense"), &mut d);
            if let Some(sa) = &st.sa {
                sa.declare(&format!("upsampling.{k}.sa"), &mut d);
            }
        }
        self.head.declare("head", &mut d);
        d
    }

    /// He-uniform kernels, zero biases, unit BN scale, seeded by `cfg.seed`.
    pub fn init_params(&self) -> Result<ParamStore> {
        materialize(&self.decls(), &mut Rng::new(self.cfg.seed))
    }

    /// Trainable element count grouped like the layer inventory table.
    pub fn breakdown(&self) -> Vec<BreakdownRow> {
        const ROWS: [(&str, &str); 11] = [
            ("Downsampling", "Conv2d"),
            ("Downsampling", "DenseBlock"),
            ("Downsampling", "SqueezeAttentionBlock"),
            ("Downsampling", "TransitionDown"),
            ("Bottleneck", "DenseBlock"),
            ("Bottleneck", "ConvLSTM"),
            ("Upsampling", "TransitionUp"),
            ("Upsampling", "DenseBlock"),
            ("Upsampling", "SqueezeAttentionBlock"),
            ("Upsampling", "Conv2d"),
            ("Exit", "Softmax"),
        ];
        let mut counts = [0usize; ROWS.len()];
        for d in self.decls().iter().filter(|d| d.kind == ParamKind::Trainable) {
            let parts: Vec<&str> = d.name.split('.').collect();
            let row = match (parts[0], parts[1]) {
                ("downsampling", "stem") => 0,
                ("downsampling", _) => match parts[2] {
                    "dense" => 1,
                    "sa" => 2,
                    _ => 3,
                },
                ("bottleneck", "dense") => 4,
                ("bottleneck", _) => 5,
                ("upsampling", _) => match parts[2] {
                    "tu" => 6,
                    "dense" => 7,
                    _ => 8,
                },
                _ => 9,
            };
            counts[row] += d.numel();
        }
        ROWS.iter()
            .zip(counts)
            .map(|(&(position, layer), count)| BreakdownRow { position, layer, count })
            .collect()
    }

    /// Forward pass on a time-major triplet batch `[3*B, 1, H, W]` (items
    /// `t*B..(t+1)*B` are time step `t`); returns `[B, classes, H, W]`
    /// probabilities for the center slices.
    ///
    /// Without the ConvLSTM the network is a plain 2-D model of the center
    /// slice, so the neighbouring slices are not encoded at all.
    pub fn forward(&self, s: &mut Session, triplet: Var) -> Result<Var> {
        let (n3, c, h, w) = s.graph.value(triplet).dims4("forward")?;
        if n3 == 0 || n3 % SEQ_LEN != 0 {
            return Err(Error::shape(
                "forward",
                format!("batch {n3} is not a whole number of {SEQ_LEN}-slice sequences"),
            ));
        }
        if c != 1 {
            return Err(Error::shape("forward", format!("expected 1 input channel, got {c}")));
        }
        let div = 1 << self.cfg.num_scales;
        if h % div != 0 || w % div != 0 {
            return Err(Error::shape("forward", format!("{h}x{w} input is not divisible by {div}")));
        }
        let b = n3 / SEQ_LEN;
        let center = |s: &mut Session, v: Var| s.graph.slice_batch(v, CENTER * b, b);

        let mut x = if self.lstm.is_some() { triplet } else { center(s, triplet)? };
        x = self.stem.forward(s, "downsampling.stem", x)?;
        let mut skips = Vec::with_capacity(self.enc.len());
        for (i, st) in self.enc.iter().enumerate() {
            let d = st.dense.forward(s, &format!("downsampling.{i}.dense"), x)?;
            let skip = s.graph.concat_channels(&[x, d])?;
            skips.push(if self.lstm.is_some() { center(s, skip)? } else { skip });
            let y = match &st.sa {
                Some(sa) => sa.forward(s, &format!("downsampling.{i}.sa"), skip)?,
                None => skip,
            };
            x = st.td.forward(s, &format!("downsampling.{i}.td"), y)?;
        }
        let mut z = self.bottleneck.forward(s, "bottleneck.dense", x)?;
        if let Some(lstm) = &self.lstm {
            let seq = (0..SEQ_LEN)
                .map(|t| s.graph.slice_batch(z, t * b, b))
                .collect::<Result<Vec<_>>>()?;
            z = lstm.forward(s, "bottleneck.convlstm", &seq)?;
        }
        for (k, st) in self.dec.iter().enumerate() {
            let u = st.tu.forward(s, &format!("upsampling.{k}.tu"), z)?;
            let cat = s.graph.concat_channels(&[u, skips[skips.len() - 1 - k]])?;
            let d = st.dense.forward(s, &format!("upsampling.{k}.dense"), cat)?;
            z = match &st.sa {
                Some(sa) => sa.forward(s, &format!("upsampling.{k}.sa"), d)?,
                None => d,
            };
        }
        let logits = self.head.forward(s, "head", z)?;
        s.graph.softmax_channels(logits)
    }
}

/// Builds the layer plan and a freshly initialized parameter tree.
pub fn build_model(cfg: &ModelConfig) -> Result<(SegNet, ParamStore)> {
    let net = SegNet::new(cfg)?;
    let params = net.init_params()?;
    Ok((net, params))
}

/// Trainable element count (kernels, biases, BN scale/shift; running stats excluded).
pub fn param_count(params: &ParamStore) -> usize {
    params.param_count()
}
