use scd_autograd::{ParamId, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Polynomial decay `base · (1 − epoch/total)^power`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolySchedule {
    pub base_lr: f64,
    pub total_epochs: usize,
    pub power: f64,
}

impl PolySchedule {
    pub fn lr_at(&self, epoch: f64) -> Result<f64> {
        let total = self.total_epochs as f64;
        if !(0.0..=total).contains(&epoch) {
            return Err(Error::OutOfRange {
                what: "epoch",
                value: epoch,
                lo: 0.0,
                hi: total,
            });
        }
        Ok(self.base_lr * (1.0 - epoch / total).powf(self.power))
    }
}

/// SGD with momentum, optional Nesterov look-ahead and L2 weight decay:
/// `g ← ∇ + wd·θ`, `v ← μv + g`, `θ ← θ − lr·(g + μv)` (Nesterov) or
/// `θ ← θ − lr·v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
    velocity: Vec<Option<Tensor>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64, nesterov: bool) -> Self {
        Self {
            momentum,
            weight_decay,
            nesterov,
            velocity: Vec::new(),
        }
    }

    pub fn velocity(&self, id: ParamId) -> Option<&Tensor> {
        self.velocity.get(id.index()).and_then(Option::as_ref)
    }

    /// Applies one update; non-trainable entries in `grads` are ignored.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: Vec<(ParamId, Tensor)>,
        lr: f64,
    ) -> Result<()> {
        if self.velocity.len() < store.len() {
            self.velocity.resize(store.len(), None);
        }
        for (id, mut g) in grads {
            if !store.param(id).trainable {
                continue;
            }
            if g.shape() != store.get(id).shape() {
                return Err(Error::DimensionMismatch(format!(
                    "gradient {:?} for parameter {} of shape {:?}",
                    g.shape(),
                    store.param(id).name,
                    store.get(id).shape()
                )));
            }
            if self.weight_decay != 0.0 {
                let wd = self.weight_decay;
                g = g.zip_map(store.get(id), |g, p| g + wd * p);
            }
            let direction = if self.momentum == 0.0 {
                g
            } else {
                let mu = self.momentum;
                let v = match self.velocity[id.index()].take() {
                    Some(v) => v.zip_map(&g, |v, g| mu * v + g),
                    None => g.clone(),
                };
                let d = if self.nesterov {
                    g.zip_map(&v, |g, v| g + mu * v)
                } else {
                    v.clone()
                };
                self.velocity[id.index()] = Some(v);
                d
            };
            let p = store.get_mut(id);
            for (x, d) in p.data_mut().iter_mut().zip(direction.data()) {
                *x -= lr * d;
            }
        }
        Ok(())
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [(ParamId, Tensor)], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|(_, g)| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schedule() -> PolySchedule {
        PolySchedule {
            base_lr: 0.1,
            total_epochs: 50,
            power: 1.5,
        }
    }

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let s = schedule();
        assert_eq!(s.lr_at(0.0).unwrap(), 0.1);
        assert_eq!(s.lr_at(50.0).unwrap(), 0.0);
        assert!((s.lr_at(25.0).unwrap() - 0.0353553).abs() < 1e-7);
        assert!(s.lr_at(50.5).is_err());
        assert!(s.lr_at(-1.0).is_err());
    }

    fn quadratic_store(x: f64) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store
            .add("x", Tensor::new(&[1], vec![x]).unwrap(), true)
            .unwrap();
        (store, id)
    }

    #[test]
    fn plain_gradient_descent_on_quadratic() {
        // f(x) = (x − 3)², f' = 2(x − 3)
        let (mut store, id) = quadratic_store(0.0);
        let mut opt = Sgd::new(0.0, 0.0, false);
        let mut x = 0.0f64;
        for _ in 0..5 {
            let g = 2.0 * (store.get(id).data()[0] - 3.0);
            opt.step(
                &mut store,
                vec![(id, Tensor::new(&[1], vec![g]).unwrap())],
                0.1,
            )
            .unwrap();
            x -= 0.1 * 2.0 * (x - 3.0);
            assert_eq!(store.get(id).data()[0], x);
        }
    }

    #[test]
    fn nesterov_matches_hand_steps() {
        let (mut store, id) = quadratic_store(1.0);
        let mut opt = Sgd::new(0.9, 0.0, true);
        let (mut x, mut v) = (1.0f64, 0.0f64);
        for _ in 0..4 {
            let g = 2.0 * (store.get(id).data()[0] - 3.0);
            opt.step(
                &mut store,
                vec![(id, Tensor::new(&[1], vec![g]).unwrap())],
                0.05,
            )
            .unwrap();
            let hg = 2.0 * (x - 3.0);
            v = 0.9 * v + hg;
            x -= 0.05 * (hg + 0.9 * v);
            assert_eq!(store.get(id).data()[0], x);
        }
    }

    #[test]
    fn zero_lr_leaves_parameters_and_buffers_alone() {
        let mut store = ParamStore::new();
        let w = store
            .add("w", Tensor::new(&[2], vec![0.3, -0.7]).unwrap(), true)
            .unwrap();
        let buf = store
            .add("b", Tensor::new(&[1], vec![2.0]).unwrap(), false)
            .unwrap();
        let mut opt = Sgd::new(0.9, 1e-4, true);
        let before = store.get(w).clone();
        opt.step(
            &mut store,
            vec![
                (w, Tensor::new(&[2], vec![1.0, 2.0]).unwrap()),
                (buf, Tensor::new(&[1], vec![5.0]).unwrap()),
            ],
            0.0,
        )
        .unwrap();
        assert_eq!(store.get(w), &before);
        assert_eq!(store.get(buf).data(), [2.0]);
        assert!(opt.velocity(buf).is_none());
        assert_eq!(opt.velocity(w).unwrap().shape(), [2]);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::zeros(&[1]), true).unwrap();
        let b = store.add("b", Tensor::zeros(&[1]), true).unwrap();
        let mut grads = vec![
            (a, Tensor::new(&[1], vec![3.0]).unwrap()),
            (b, Tensor::new(&[1], vec![4.0]).unwrap()),
        ];
        assert_eq!(clip_grad_norm(&mut grads, 1.0), 5.0);
        assert!((grads[0].1.data()[0] - 0.6).abs() < 1e-15);
        assert!((grads[1].1.data()[0] - 0.8).abs() < 1e-15);
    }
}
