use crate::data::{batch_tensor, make_triplets, Dims, MaskVolume, Volume};
use crate::error::{Error, Result};
use crate::metrics::{confusion, MetricsReport};
use crate::model::SegNet;
use crate::nn::Session;
use crate::par;
use crate::rng::Rng;
use crate::tensor::{Mode, ParamStore};

use super::checkpoint::Checkpoint;
use super::fit::LabeledVolume;

/// Slices per inference forward pass.
pub const PREDICT_BATCH: usize = 4;

/// Segments every slice of `v` in eval mode. A voxel is labelled lesion only
/// if the lesion probability is strictly the largest; ties go to background.
pub fn predict_with(net: &SegNet, params: &ParamStore, v: &Volume) -> Result<MaskVolume> {
    let d = v.dims();
    let size = net.config().input_size;
    if (d.height, d.width) != (size, size) {
        return Err(Error::shape(
            "predict",
            format!("volume slices are {}x{}, model expects {size}x{size}", d.height, d.width),
        ));
    }
    let triplets = make_triplets(d.slices);
    let mut labels = Vec::with_capacity(d.voxels());
    for chunk in triplets.chunks(PREDICT_BATCH) {
        let items: Vec<_> = chunk.iter().map(|&t| (v, t)).collect();
        let mut s = Session::new(params, Mode::Eval, Rng::new(0));
        let x = s.input(batch_tensor(&items)?);
        let probs = net.forward(&mut s, x)?;
        let p = s.graph.value(probs);
        let (b, k, h, w) = p.dims4("predict")?;
        let plane = h * w;
        for n in 0..b {
            let base = n * k * plane;
            for i in 0..plane {
                let mut best = 0;
                for c in 1..k {
                    if p.data()[base + c * plane + i] > p.data()[base + best * plane + i] {
                        best = c;
                    }
                }
                labels.push(u8::from(best != 0));
            }
        }
    }
    MaskVolume::new(Dims::new(d.slices, d.height, d.width), labels)
}

pub fn predict(ckpt: &Checkpoint, v: &Volume) -> Result<MaskVolume> {
    predict_with(&ckpt.net()?, &ckpt.params, v)
}

pub struct Evaluation {
    pub report: MetricsReport,
    pub predictions: Vec<MaskVolume>,
}

/// Predicts each volume (in parallel across volumes) and scores it against
/// its reference mask. Report rows keep the input order.
pub fn evaluate(ckpt: &Checkpoint, items: &[LabeledVolume]) -> Result<Evaluation> {
    if items.is_empty() {
        return Err(Error::invalid("evaluate", "no volumes"));
    }
    let net = ckpt.net()?;
    let results = par::map_indexed(items.len(), |i| -> Result<_> {
        let pred = predict_with(&net, &ckpt.params, &items[i].image)?;
        let counts = confusion(&pred, &items[i].mask)?;
        Ok((pred, counts))
    });
    let mut predictions = Vec::with_capacity(items.len());
    let mut counts = Vec::with_capacity(items.len());
    for (item, r) in items.iter().zip(results) {
        let (pred, c) = r?;
        predictions.push(pred);
        counts.push((item.id.clone(), c));
    }
    Ok(Evaluation {
        report: MetricsReport::from_counts(counts)?,
        predictions,
    })
}
