use ndarray::Zip;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::Mat;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    value: Mat,
    m: Mat,
    v: Mat,
}

/// Named parameter tensors with Adam moments.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::with_lr(1e-4)
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        let zeros = Mat::zeros(value.dim());
        self.entries.push(Entry { name, m: zeros.clone(), v: zeros, value });
        ParamId(self.entries.len() - 1)
    }

    /// Uniform Glorot initialization for a `[fan_in, fan_out]` matrix.
    pub fn add_glorot(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> ParamId {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let value = Mat::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-a..a));
        self.add(name, value)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.entries[id.0].value
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn fill(&mut self, x: f64) {
        for e in &mut self.entries {
            e.value.fill(x);
        }
    }

    /// Replaces a parameter by name, keeping its shape.
    pub fn set(&mut self, name: &str, value: Mat) -> Result<()> {
        let id = self.find(name).ok_or_else(|| Error::format("weights", format!("unknown tensor {name}")))?;
        let e = &mut self.entries[id.0];
        if e.value.dim() != value.dim() {
            return Err(Error::shape("set", format!("{name}: {:?} vs {:?}", e.value.dim(), value.dim())));
        }
        e.value = value;
        Ok(())
    }

    /// Rounds every value to the nearest float32, the on-disk precision.
    pub fn round_to_f32(&mut self) {
        for e in &mut self.entries {
            e.value.mapv_inplace(|x| x as f32 as f64);
        }
    }

    /// One bias-corrected Adam update. `grads` is indexed like the store.
    pub fn adam_step(&mut self, grads: &[Mat], cfg: &AdamConfig) -> Result<()> {
        if grads.len() != self.entries.len() {
            return Err(Error::shape("adam_step", format!("{} grads for {} params", grads.len(), self.entries.len())));
        }
        if let Some((e, g)) = self.entries.iter().zip(grads).find(|(e, g)| e.value.dim() != g.dim()) {
            return Err(Error::shape("adam_step", format!("{}: {:?} vs {:?}", e.name, e.value.dim(), g.dim())));
        }
        if grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFiniteValue("adam gradient".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (e, g) in self.entries.iter_mut().zip(grads) {
            Zip::from(&mut e.value).and(&mut e.m).and(&mut e.v).and(g).for_each(|w, m, v, &g| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *w -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            });
        }
        Ok(())
    }
}

/// `lr = base * gamma^epoch`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentialLr {
    pub base: f64,
    pub gamma: f64,
}

impl ExponentialLr {
    pub fn lr(&self, epoch: usize) -> f64 {
        self.base * self.gamma.powi(epoch as i32)
    }
}

/// Multiplies the rate by `factor` after `patience` epochs without a
/// validation-loss improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauLr {
    lr: f64,
    factor: f64,
    patience: usize,
    best: f64,
    stale: usize,
}

impl PlateauLr {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        Self { lr, factor, patience, best: f64::INFINITY, stale: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn observe(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                self.lr *= self.factor;
                self.stale = 0;
            }
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradient_leaves_params_but_counts_step() {
        let mut s = ParamStore::new();
        let id = s.add("w", array![[1.0, -2.0]]);
        s.adam_step(&[Mat::zeros((1, 2))], &AdamConfig::with_lr(0.1)).unwrap();
        assert_eq!(s.value(id), &array![[1.0, -2.0]]);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn first_step_matches_hand_formula() {
        let mut s = ParamStore::new();
        let id = s.add("w", array![[0.5, 0.5, 0.5]]);
        let g = array![[0.2, -3.0, 1e-9]];
        let cfg = AdamConfig::with_lr(0.01);
        s.adam_step(&[g.clone()], &cfg).unwrap();
        for j in 0..3 {
            // m̂ = g, v̂ = g² after bias correction on the first step
            let gj: f64 = g[(0, j)];
            let expect = 0.5 - 0.01 * gj / (gj.abs() + 1e-8);
            assert!((s.value(id)[(0, j)] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_grads_give_identical_updates() {
        let mut s = ParamStore::new();
        let a = s.add("a", array![[1.0]]);
        let b = s.add("b", array![[1.0]]);
        for _ in 0..5 {
            s.adam_step(&[array![[0.3]], array![[0.3]]], &AdamConfig::with_lr(0.05)).unwrap();
        }
        assert_eq!(s.value(a), s.value(b));
    }

    #[test]
    fn grad_shape_is_checked() {
        let mut s = ParamStore::new();
        s.add("w", Mat::zeros((2, 2)));
        assert!(matches!(s.adam_step(&[Mat::zeros((2, 1))], &AdamConfig::default()), Err(Error::ShapeMismatch { .. })));
        assert!(s.adam_step(&[], &AdamConfig::default()).is_err());
    }

    #[test]
    fn schedulers() {
        let e = ExponentialLr { base: 1e-4, gamma: 0.9 };
        assert_eq!(e.lr(0), 1e-4);
        assert!((e.lr(2) - 0.81e-4).abs() < 1e-18);
        let mut p = PlateauLr::new(1.0, 0.5, 3);
        assert_eq!(p.observe(1.0), 1.0);
        assert_eq!(p.observe(1.0), 1.0);
        assert_eq!(p.observe(2.0), 1.0);
        assert_eq!(p.observe(1.5), 0.5);
        assert_eq!(p.observe(0.5), 0.5);
    }
}
