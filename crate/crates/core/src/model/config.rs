use crate::error::{Error, Result};
use crate::kv::{KvDoc, KvWriter};

/// Architecture hyperparameters, including the two ablation switches.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub num_scales: usize,
    pub layers_per_dense_block: usize,
    pub growth_rate: usize,
    pub first_conv_filters: usize,
    pub convlstm_hidden: usize,
    pub dropout_p: f64,
    pub num_classes: usize,
    pub use_sa: bool,
    pub use_clstm: bool,
    pub seed: u64,
    /// Square input side the model is built for (slices are `input_size x input_size`).
    pub input_size: usize,
}

impl Default for ModelConfig {
    /// Full-size configuration; growth / stem / hidden are the calibrated values.
    fn default() -> Self {
        ModelConfig {
            num_scales: 5,
            layers_per_dense_block: 5,
            growth_rate: 12,
            first_conv_filters: 46,
            convlstm_hidden: 29,
            dropout_p: 0.2,
            num_classes: 2,
            use_sa: true,
            use_clstm: true,
            seed: 0,
            input_size: 160,
        }
    }
}

impl ModelConfig {
    /// Desk-scale model: 2 scales, 2 layers per block, growth 4, 32x32 input.
    pub fn miniature() -> Self {
        ModelConfig {
            num_scales: 2,
            layers_per_dense_block: 2,
            growth_rate: 4,
            first_conv_filters: 8,
            convlstm_hidden: 8,
            input_size: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_scales", self.num_scales),
            ("layers_per_dense_block", self.layers_per_dense_block),
            ("growth_rate", self.growth_rate),
            ("first_conv_filters", self.first_conv_filters),
            ("convlstm_hidden", self.convlstm_hidden),
            ("input_size", self.input_size),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes must be >= 2, got {}", self.num_classes)));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p must be in [0, 1), got {}", self.dropout_p)));
        }
        let div = 1usize
            .checked_shl(self.num_scales as u32)
            .filter(|d| *d > 0 && self.num_scales < usize::BITS as usize)
            .ok_or_else(|| Error::Config("num_scales too large".into()))?;
        if !self.input_size.is_multiple_of(div) {
            return Err(Error::Config(format!(
                "input size {} is not divisible by 2^{} = {div}",
                self.input_size, self.num_scales
            )));
        }
        Ok(())
    }

    pub fn to_kv(&self, w: &mut KvWriter) {
        w.put("num_scales", self.num_scales)
            .put("layers_per_dense_block", self.layers_per_dense_block)
            .put("growth_rate", self.growth_rate)
            .put("first_conv_filters", self.first_conv_filters)
            .put("convlstm_hidden", self.convlstm_hidden)
            .put("dropout_p", self.dropout_p)
            .put("num_classes", self.num_classes)
            .put("use_sa", self.use_sa)
            .put("use_clstm", self.use_clstm)
            .put("model_seed", self.seed)
            .put("input_size", self.input_size);
    }

    /// Consumes model keys from `doc`, starting from `base` for absent keys.
    pub fn from_kv(doc: &mut KvDoc, base: &ModelConfig) -> Result<Self> {
        let cfg = ModelConfig {
            num_scales: doc.take_or("num_scales", base.num_scales)?,
            layers_per_dense_block: doc.take_or("layers_per_dense_block", base.layers_per_dense_block)?,
            growth_rate: doc.take_or("growth_rate", base.growth_rate)?,
            first_conv_filters: doc.take_or("first_conv_filters", base.first_conv_filters)?,
            convlstm_hidden: doc.take_or("convlstm_hidden", base.convlstm_hidden)?,
            dropout_p: doc.take_or("dropout_p", base.dropout_p)?,
            num_classes: doc.take_or("num_classes", base.num_classes)?,
            use_sa: doc.take_or("use_sa", base.use_sa)?,
            use_clstm: doc.take_or("use_clstm", base.use_clstm)?,
            seed: doc.take_or("model_seed", base.seed)?,
            input_size: doc.take_or("input_size", base.input_size)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Name of the first field that differs from `other`, if any.
    pub fn first_difference(&self, other: &ModelConfig) -> Option<&'static str> {
        let checks: [(&'static str, bool); 11] = [
            ("num_scales", self.num_scales == other.num_scales),
            ("layers_per_dense_block", self.layers_per_dense_block == other.layers_per_dense_block),
            ("growth_rate", self.growth_rate == other.growth_rate),
            ("first_conv_filters", self.first_conv_filters == other.first_conv_filters),
            ("convlstm_hidden", self.convlstm_hidden == other.convlstm_hidden),
            ("dropout_p", self.dropout_p.to_bits() == other.dropout_p.to_bits()),
            ("num_classes", self.num_classes == other.num_classes),
            ("use_sa", self.use_sa == other.use_sa),
            ("use_clstm", self.use_clstm == other.use_clstm),
            ("model_seed", self.seed == other.seed),
            ("input_size", self.input_size == other.input_size),
        ];
        checks.iter().find(|(_, same)| !same).map(|(k, _)| *k)
    }
}

/// One row of the ablation table.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub name: &'static str,
    pub config: ModelConfig,
}

/// The four ablation configurations in table order: plain backbone, + ConvLSTM,
/// + SA, + SA + ConvLSTM.
pub fn ablation_variants(base: &ModelConfig) -> [Variant; 4] {
    let with = |name, use_sa, use_clstm| Variant {
        name,
        config: ModelConfig {
            use_sa,
            use_clstm,
            ..base.clone()
        },
    };
    [
        with("FC-DenseNet", false, false),
        with("FC-DenseNet + C-LSTM", false, true),
        with("FC-DenseNet + SA", true, false),
        with("FC-DenseNet + SA + C-LSTM", true, true),
    ]
}
