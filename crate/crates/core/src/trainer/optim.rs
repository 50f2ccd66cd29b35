use std::f64::consts::PI;

use super::config::{OptimizerKind, TrainConfig};
use crate::archzoo::{Gradients, ParamStore};
use crate::scalar::Scalar;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Linear warmup then cosine decay to zero, evaluated per step.
#[derive(Debug, Clone, Copy)]
pub struct Schedule {
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl Schedule {
    pub fn new(config: &TrainConfig, steps_per_epoch: usize) -> Self {
        let total_steps = config.epochs * steps_per_epoch;
        let warmup_steps = config.warmup_epochs.min(config.epochs.saturating_sub(1)) * steps_per_epoch;
        Self {
            base_lr: config.lr,
            warmup_steps,
            total_steps,
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = (self.total_steps - self.warmup_steps).max(1) as f64;
        let t = (step - self.warmup_steps) as f64 / span;
        0.5 * self.base_lr * (1.0 + (PI * t.min(1.0)).cos())
    }
}

/// AdamW (decoupled decay) or SGD with momentum (L2 decay added to the
/// gradient). Frozen slots keep no state and are never touched; decay only
/// applies to tensors of rank ≥ 2.
pub struct Optimizer<T> {
    kind: OptimizerKind,
    weight_decay: f64,
    momentum: f64,
    trainable: Vec<bool>,
    decay: Vec<bool>,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: i32,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: &TrainConfig, params: &ParamStore<T>, frozen: &[bool]) -> Self {
        let n = params.len();
        let trainable: Vec<bool> = (0..n).map(|s| !frozen[s]).collect();
        let decay = (0..n).map(|s| params.at(s).shape.len() >= 2).collect();
        let state = |on: bool| -> Vec<Vec<T>> {
            (0..n)
                .map(|s| if on && trainable[s] { vec![T::zero(); params.at(s).numel()] } else { Vec::new() })
                .collect()
        };
        Self {
            kind: config.optimizer,
            weight_decay: config.weight_decay,
            momentum: config.momentum,
            m: state(true),
            v: state(config.optimizer == OptimizerKind::Adamw),
            trainable,
            decay,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t);
        let bc2 = 1.0 - BETA2.powi(self.t);
        for (s, g) in grads.iter().enumerate() {
            if !self.trainable[s] {
                continue;
            }
            let wd = if self.decay[s] { self.weight_decay } else { 0.0 };
            let p = &mut params.at_mut(s).data;
            match self.kind {
                OptimizerKind::Adamw => {
                    let (m, v) = (&mut self.m[s], &mut self.v[s]);
                    let shrink = T::from_f64_lossy(1.0 - lr * wd);
                    let (b1, b2) = (T::from_f64_lossy(BETA1), T::from_f64_lossy(BETA2));
                    let (ib1, ib2) = (T::from_f64_lossy(1.0 - BETA1), T::from_f64_lossy(1.0 - BETA2));
                    let step = T::from_f64_lossy(lr / bc1);
                    let inv_bc2 = T::from_f64_lossy(1.0 / bc2);
                    let eps = T::from_f64_lossy(EPS);
                    for i in 0..p.len() {
                        m[i] = b1 * m[i] + ib1 * g[i];
                        v[i] = b2 * v[i] + ib2 * g[i] * g[i];
                        p[i] = p[i] * shrink - step * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
                    }
                }
                OptimizerKind::SgdMomentum => {
                    let buf = &mut self.m[s];
                    let mu = T::from_f64_lossy(self.momentum);
                    let wd = T::from_f64_lossy(wd);
                    let lr = T::from_f64_lossy(lr);
                    for i in 0..p.len() {
                        buf[i] = mu * buf[i] + g[i] + wd * p[i];
                        p[i] -= lr * buf[i];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn config(kind: OptimizerKind) -> TrainConfig {
        TrainConfig {
            optimizer: kind,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_shape() {
        let mut c = TrainConfig::default();
        c.epochs = 10;
        c.warmup_epochs = 2;
        let s = Schedule::new(&c, 5);
        assert!((s.lr(0) - c.lr / 10.0).abs() < 1e-15);
        assert!((s.lr(9) - c.lr).abs() < 1e-15);
        assert!((s.lr(10) - c.lr).abs() < 1e-15);
        assert!(s.lr(49) < 1e-5);
        for i in 10..49 {
            assert!(s.lr(i + 1) <= s.lr(i));
        }
        c.warmup_epochs = 50;
        let s = Schedule::new(&c, 1);
        assert_eq!(s.warmup_steps, 9);
    }

    #[test]
    fn frozen_slots_untouched_and_decay_rank_rule() {
        for kind in [OptimizerKind::Adamw, OptimizerKind::SgdMomentum] {
            let mut p = ParamStore::default();
            p.insert("w", Tensor::filled(&[2, 2], 1.0f64));
            p.insert("b", Tensor::filled(&[2], 1.0f64));
            p.insert("frozen", Tensor::filled(&[2, 2], 1.0f64));
            let mut opt = Optimizer::new(&config(kind), &p, &[false, false, true]);
            let zero = vec![vec![0.0; 4], vec![0.0; 2], vec![5.0; 4]];
            opt.step(&mut p, &zero, 0.1);
            // zero gradient: only decay moves weights; biases and frozen stay put
            assert!(p.get("w").unwrap().data[0] < 1.0, "{kind:?}");
            assert_eq!(p.get("b").unwrap().data, vec![1.0; 2]);
            assert_eq!(p.get("frozen").unwrap().data, vec![1.0; 4]);
        }
    }

    #[test]
    fn adamw_first_step_is_lr_sized() {
        let mut p = ParamStore::default();
        p.insert("b", Tensor::filled(&[1], 0.0f64));
        let mut opt = Optimizer::new(&config(OptimizerKind::Adamw), &p, &[false]);
        opt.step(&mut p, &vec![vec![0.3]], 0.01);
        assert!((p.get("b").unwrap().data[0] + 0.01).abs() < 1e-6);
    }
}
