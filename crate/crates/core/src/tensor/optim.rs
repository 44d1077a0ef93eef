//! Plain stochastic gradient descent with L2 weight decay.

use super::{ParamKind, ParamStore};
use crate::error::{Error, Result};

/// `p <- p - lr * (grad + weight_decay * p)` for every trainable parameter,
/// then clears the gradients. Fails without touching anything if any
/// trainable parameter lacks a gradient.
pub fn sgd_step(store: &mut ParamStore, lr: f64, weight_decay: f64) -> Result<()> {
    if let Some((name, _)) = store
        .iter()
        .find(|(_, p)| p.kind == ParamKind::Trainable && p.grad.is_none())
    {
        return Err(Error::MissingGrad(name.to_string()));
    }
    for (_, p) in store.params_mut() {
        if p.kind != ParamKind::Trainable {
            continue;
        }
        let grad = p.grad.take().expect("checked above");
        for (w, g) in p.value.data_mut().iter_mut().zip(grad) {
            *w -= lr * (g + weight_decay * *w);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store(p: f64, g: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::scalar(p), ParamKind::Trainable).unwrap();
        s.accumulate_grad("p", &[g]).unwrap();
        s
    }

    #[test]
    fn zero_lr_is_noop() {
        let mut s = store(1.3, 5.0);
        sgd_step(&mut s, 0.0, 1e-4).unwrap();
        assert_eq!(s.get("p").unwrap().data(), &[1.3]);
        assert!(s.grad("p").is_none());
    }

    #[test]
    fn plain_step() {
        let mut s = store(1.0, 1.0);
        sgd_step(&mut s, 0.1, 0.0).unwrap();
        assert_eq!(s.get("p").unwrap().data(), &[0.9]);
    }

    #[test]
    fn decay_only_step() {
        let mut s = store(1.0, 0.0);
        sgd_step(&mut s, 0.1, 1e-4).unwrap();
        assert!((s.get("p").unwrap().data()[0] - 0.99999).abs() < 1e-15);
    }

    #[test]
    fn missing_grad_names_parameter() {
        let mut s = ParamStore::new();
        s.insert("enc.w", Tensor::scalar(1.0), ParamKind::Trainable).unwrap();
        let err = sgd_step(&mut s, 0.1, 0.0).unwrap_err();
        assert!(err.to_string().contains("enc.w"));
    }

    #[test]
    fn halved_lr_twice_differs_from_one_step() {
        // weight decay compounds: (1 - a)(1 - a) != 1 - 2a
        let (p, g, lr, wd) = (0.8, 0.3, 0.1, 0.5);
        let mut one = store(p, g);
        sgd_step(&mut one, lr, wd).unwrap();
        let mut two = store(p, g);
        sgd_step(&mut two, lr / 2.0, wd).unwrap();
        two.accumulate_grad("p", &[g]).unwrap();
        sgd_step(&mut two, lr / 2.0, wd).unwrap();
        let (a, b) = (one.get("p").unwrap().data()[0], two.get("p").unwrap().data()[0]);
        // one: 0.8 - 0.1*(0.3 + 0.4) = 0.73
        // two: 0.8 - 0.05*0.7 = 0.765; 0.765 - 0.05*(0.3 + 0.3825) = 0.730875
        assert!((a - 0.73).abs() < 1e-12);
        assert!((b - 0.730875).abs() < 1e-12);
    }
}
