//! Central finite-difference gradient checking.
//!
//! The function under test maps input tensors to any tensor; it is reduced to a
//! scalar by a fixed pseudo-random weighting so every output element carries a
//! distinct upstream gradient. The closure must be deterministic (reseed any
//! dropout rng inside it).

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{Graph, Tensor, Var};

/// Denominator floor for the relative error, so gradients that are zero up to
/// roundoff do not produce spurious failures.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradReport {
    pub max_rel_err: f64,
    /// `(input index, element index, analytic, numeric)` at the worst element.
    pub worst: (usize, usize, f64, f64),
    pub checked: usize,
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

fn weighted_loss<F>(g: &mut Graph, vars: &[Var], f: &F, weights: &mut Option<Tensor>) -> Result<Var>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let out = f(g, vars)?;
    let shape = g.shape(out).to_vec();
    let w = weights.get_or_insert_with(|| {
        let mut rng = Rng::new(0x9d_5eed);
        Tensor::from_fn(&shape, |_| rng.uniform_range(-1.0, 1.0))
    });
    let wv = g.constant(w.clone());
    let prod = g.mul(out, wv)?;
    Ok(g.sum(prod))
}

/// Compares analytic gradients with `(L(x+h) - L(x-h)) / 2h` for every element
/// of every input listed in `check` (or all inputs when `None`). At most
/// `max_elems` elements per input are probed, chosen by a fixed stride.
pub fn check<F>(inputs: &[Tensor], f: F, h: f64, check: Option<&[usize]>, max_elems: usize) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut weights = None;
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = weighted_loss(&mut g, &vars, &f, &mut weights)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let eval = |xs: &[Tensor], weights: &mut Option<Tensor>| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.param(t.clone())).collect();
        let l = weighted_loss(&mut g, &vars, &f, weights)?;
        Ok(g.value(l).data()[0])
    };

    let all: Vec<usize> = (0..inputs.len()).collect();
    let mut report = GradReport {
        max_rel_err: 0.0,
        worst: (0, 0, 0.0, 0.0),
        checked: 0,
    };
    let mut xs = inputs.to_vec();
    for &k in check.unwrap_or(&all) {
        let n = inputs[k].numel();
        let step = n.div_ceil(max_elems.max(1)).max(1);
        for e in (0..n).step_by(step) {
            let orig = inputs[k].data()[e];
            xs[k].data_mut()[e] = orig + h;
            let up = eval(&xs, &mut weights)?;
            xs[k].data_mut()[e] = orig - h;
            let down = eval(&xs, &mut weights)?;
            xs[k].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = rel_err(analytic[k][e], numeric);
            report.checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = (k, e, analytic[k][e], numeric);
            }
        }
    }
    Ok(report)
}

/// Random tensor with entries uniform in `[-1, 1)`.
pub fn random_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.uniform_range(-1.0, 1.0))
}
