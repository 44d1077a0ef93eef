use crate::data::{batch_tensor, make_triplets, mask_tensor, MaskVolume, Triplet, Volume};
use crate::error::{Error, Result};
use crate::metrics::{confusion, dice};
use crate::model::{ModelConfig, SegNet};
use crate::nn::Session;
use crate::par;
use crate::rng::Rng;
use crate::tensor::{optim::sgd_step, Mode, ParamStore};

use super::checkpoint::{Checkpoint, Cursor};
use super::config::TrainConfig;
use super::infer::predict_with;
use super::loss::soft_dice_loss;

/// A preprocessed image with its reference mask.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledVolume {
    pub id: String,
    pub image: Volume,
    pub mask: MaskVolume,
}

impl LabeledVolume {
    pub fn new(id: impl Into<String>, image: Volume, mask: MaskVolume) -> Result<Self> {
        if image.dims() != mask.dims() {
            return Err(Error::shape("LabeledVolume", format!("image {:?} vs mask {:?}", image.dims(), mask.dims())));
        }
        Ok(LabeledVolume {
            id: id.into(),
            image,
            mask,
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct FoldData {
    pub train: Vec<LabeledVolume>,
    pub val: Vec<LabeledVolume>,
    pub test: Vec<LabeledVolume>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub train_loss: f64,
    /// Mean per-volume Dice on the validation set.
    pub val_dice: f64,
    /// Optimizer steps taken so far.
    pub steps: usize,
}

pub struct TrainOutcome {
    /// Snapshot with the highest validation Dice.
    pub best: Checkpoint,
    /// Snapshot after the final step.
    pub last: Checkpoint,
    pub history: Vec<EpochRecord>,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
}

/// Mean volume Dice of `net` on `vols`, volumes evaluated in parallel.
pub fn validation_dice(net: &SegNet, params: &ParamStore, vols: &[LabeledVolume]) -> Result<f64> {
    let scores = par::map_indexed(vols.len(), |i| -> Result<f64> {
        let pred = predict_with(net, params, &vols[i].image)?;
        Ok(dice(&confusion(&pred, &vols[i].mask)?))
    });
    let scores = scores.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

const SHUFFLE_STREAM: u64 = u64::MAX;

/// Trains a fresh model on `data.train`, validating on `data.val` after each
/// epoch. `sink` receives each epoch record as it completes.
pub fn train(
    data: &FoldData,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    sink: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    tcfg.validate()?;
    let net = SegNet::new(mcfg)?;
    let mut params = net.init_params()?;
    if data.train.is_empty() {
        return Err(Error::Data("no training volumes".into()));
    }
    if tcfg.epochs > 0 && data.val.is_empty() {
        return Err(Error::Data("no validation volumes".into()));
    }
    let size = mcfg.input_size;
    if let Some(v) = data.train.iter().chain(&data.val).find(|v| {
        let d = v.image.dims();
        (d.height, d.width) != (size, size)
    }) {
        return Err(Error::shape(
            "train",
            format!("volume `{}` slices are {}x{}, model expects {size}x{size}", v.id, v.image.dims().height, v.image.dims().width),
        ));
    }

    let root = Rng::new(tcfg.seed);
    let mut order_rng = root.split(SHUFFLE_STREAM);
    let mut samples: Vec<(usize, Triplet)> = data
        .train
        .iter()
        .enumerate()
        .flat_map(|(i, v)| make_triplets(v.image.dims().slices).into_iter().map(move |t| (i, t)))
        .collect();

    let snapshot = |params: &ParamStore, epoch, step, rng: &Rng, dice| Checkpoint {
        model: mcfg.clone(),
        train: tcfg.clone(),
        params: params.clone(),
        cursor: Cursor {
            epoch,
            step,
            rng: rng.state(),
        },
        best_val_dice: dice,
    };
    let mut best = snapshot(&params, 0, 0, &order_rng, f64::NAN);
    let mut history = Vec::new();
    let mut step_losses = Vec::new();
    let mut step = 0usize;
    let budget = tcfg.max_steps.unwrap_or(usize::MAX);

    for epoch in 0..tcfg.epochs {
        if step >= budget {
            break;
        }
        order_rng.shuffle(&mut samples);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in samples.chunks(tcfg.batch_size) {
            if step >= budget {
                break;
            }
            let images: Vec<_> = batch.iter().map(|&(i, t)| (&data.train[i].image, t)).collect();
            let masks: Vec<_> = batch.iter().map(|&(i, t)| (&data.train[i].mask, t)).collect();
            let x = batch_tensor(&images)?;
            let y = mask_tensor(&masks)?;

            let mut s = Session::new(&params, Mode::Train, root.split(step as u64));
            let xv = s.input(x);
            let probs = net.forward(&mut s, xv)?;
            let loss = soft_dice_loss(&mut s.graph, probs, &y, tcfg.eps_dice)?;
            let value = s.graph.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch: epoch + 1, step });
            }
            s.backward(loss)?;
            s.finish().commit(&mut params)?;
            sgd_step(&mut params, tcfg.lr, tcfg.weight_decay)?;

            step_losses.push(value);
            epoch_loss += value;
            batches += 1;
            step += 1;
        }
        let val_dice = validation_dice(&net, &params, &data.val)?;
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: epoch_loss / batches.max(1) as f64,
            val_dice,
            steps: step,
        };
        if best.best_val_dice.is_nan() || val_dice > best.best_val_dice {
            best = snapshot(&params, epoch + 1, step, &order_rng, val_dice);
        }
        history.push(record);
        sink(&record);
    }
    let last_dice = history.last().map_or(f64::NAN, |r: &EpochRecord| r.val_dice);
    let last = snapshot(&params, history.len(), step, &order_rng, last_dice);
    Ok(TrainOutcome {
        best,
        last,
        history,
        step_losses,
    })
}
