use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::{ablation_variants, ModelConfig};

use super::config::TrainConfig;
use super::fit::{train, validation_dice, EpochRecord, FoldData};

/// Test Dice per variant (rows) and fold (columns), with a per-row mean.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationGrid {
    pub variants: Vec<&'static str>,
    pub fold_ids: Vec<usize>,
    pub dice: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

impl AblationGrid {
    pub fn to_text(&self) -> String {
        let width = self.variants.iter().map(|v| v.len()).max().unwrap_or(0).max(7);
        let mut s = format!("{:<width$}", "Model");
        for f in &self.fold_ids {
            let _ = write!(s, " {:>8}", format!("Fold{f}"));
        }
        let _ = writeln!(s, " {:>8}", "Mean");
        for (r, name) in self.variants.iter().enumerate() {
            let _ = write!(s, "{name:<width$}");
            for d in &self.dice[r] {
                let _ = write!(s, " {d:>8.4}");
            }
            let _ = writeln!(s, " {:>8.4}", self.mean[r]);
        }
        s
    }
}

/// Trains each ablation variant on each fold and scores the best snapshot on
/// the fold's test volumes.
pub fn run_ablation(
    folds: &[(usize, FoldData)],
    base: &ModelConfig,
    tcfg: &TrainConfig,
    progress: &mut dyn FnMut(&str, usize, &EpochRecord),
) -> Result<AblationGrid> {
    if folds.is_empty() {
        return Err(Error::invalid("run_ablation", "no folds"));
    }
    let variants = ablation_variants(base);
    let mut dice = Vec::with_capacity(variants.len());
    for v in &variants {
        let mut row = Vec::with_capacity(folds.len());
        for (fold_id, data) in folds {
            if data.test.is_empty() {
                return Err(Error::Data(format!("fold {fold_id} has no test volume")));
            }
            let out = train(data, &v.config, tcfg, &mut |r| progress(v.name, *fold_id, r))?;
            let net = out.best.net()?;
            row.push(validation_dice(&net, &out.best.params, &data.test)?);
        }
        dice.push(row);
    }
    let mean = dice.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect();
    Ok(AblationGrid {
        variants: variants.iter().map(|v| v.name).collect(),
        fold_ids: folds.iter().map(|(f, _)| *f).collect(),
        dice,
        mean,
    })
}
