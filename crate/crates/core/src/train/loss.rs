use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// `1 - (2 * sum(p1 * g) + eps) / (sum(p1) + sum(g) + eps)`, with `p1` the
/// lesion channel of `prob: [B, K, H, W]` and `gt: [B, 1, H, W]` binary. Sums
/// run jointly over the whole batch.
pub fn soft_dice_loss(g: &mut Graph, prob: Var, gt: &Tensor, eps: f64) -> Result<Var> {
    let (b, k, h, w) = g.value(prob).dims4("soft_dice_loss")?;
    if k < 2 {
        return Err(Error::shape("soft_dice_loss", format!("need at least 2 classes, got {k}")));
    }
    if gt.shape() != [b, 1, h, w] {
        return Err(Error::shape(
            "soft_dice_loss",
            format!("target {:?} does not match probabilities {:?}", gt.shape(), g.shape(prob)),
        ));
    }
    if gt.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid("soft_dice_loss", "target is not binary"));
    }
    let gt_sum: f64 = gt.data().iter().sum();
    let p1 = g.slice_channels(prob, 1, 1)?;
    let target = g.constant(gt.clone());
    let overlap = g.mul(p1, target)?;
    let inter = g.sum(overlap);
    let num = g.scale(inter, 2.0);
    let num = g.add_scalar(num, eps);
    let p_sum = g.sum(p1);
    let den = g.add_scalar(p_sum, gt_sum + eps);
    let ratio = g.div(num, den)?;
    let neg = g.scale(ratio, -1.0);
    Ok(g.add_scalar(neg, 1.0))
}
