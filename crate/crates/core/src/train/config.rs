use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::{KvDoc, KvWriter};
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub eps_dice: f64,
    /// Stops after this many optimizer steps, finishing the current epoch's validation.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            lr: 1e-4,
            weight_decay: 1e-4,
            batch_size: 4,
            seed: 0,
            eps_dice: 1e-6,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    /// `lr == 0` is accepted and leaves the trainable parameters untouched.
    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::Config(d));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be finite and >= 0, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.eps_dice.is_finite() && self.eps_dice > 0.0) {
            return bad(format!("eps_dice must be > 0, got {}", self.eps_dice));
        }
        Ok(())
    }

    pub fn to_kv(&self, w: &mut KvWriter) {
        w.put("epochs", self.epochs)
            .put("lr", self.lr)
            .put("weight_decay", self.weight_decay)
            .put("batch_size", self.batch_size)
            .put("seed", self.seed)
            .put("eps_dice", self.eps_dice);
        if let Some(m) = self.max_steps {
            w.put("max_steps", m);
        }
    }

    pub fn from_kv(doc: &mut KvDoc, base: &TrainConfig) -> Result<Self> {
        let cfg = TrainConfig {
            epochs: doc.take_or("epochs", base.epochs)?,
            lr: doc.take_or("lr", base.lr)?,
            weight_decay: doc.take_or("weight_decay", base.weight_decay)?,
            batch_size: doc.take_or("batch_size", base.batch_size)?,
            seed: doc.take_or("seed", base.seed)?,
            eps_dice: doc.take_or("eps_dice", base.eps_dice)?,
            max_steps: doc.take("max_steps")?.or(base.max_steps),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses a config document with `model.*` and `train.*` keys. Absent keys
/// keep the given defaults; unknown keys are errors.
pub fn parse_config(text: &str, model: &ModelConfig, train: &TrainConfig) -> Result<(ModelConfig, TrainConfig)> {
    let mut doc = KvDoc::parse(text)?;
    let mut m = doc.split_prefix("model.");
    let mut t = doc.split_prefix("train.");
    let model = ModelConfig::from_kv(&mut m, model)?;
    let train = TrainConfig::from_kv(&mut t, train)?;
    m.finish().map_err(|e| prefix_key(e, "model."))?;
    t.finish().map_err(|e| prefix_key(e, "train."))?;
    doc.finish()?;
    Ok((model, train))
}

fn prefix_key(e: Error, prefix: &str) -> Error {
    match e {
        Error::ConfigKey { key, line, detail } => Error::ConfigKey {
            key: format!("{prefix}{key}"),
            line,
            detail,
        },
        e => e,
    }
}

pub fn read_config(path: impl AsRef<Path>, model: &ModelConfig, train: &TrainConfig) -> Result<(ModelConfig, TrainConfig)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, model, train)
}
