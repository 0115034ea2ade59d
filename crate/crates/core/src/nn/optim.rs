//! Adam with decoupled weight decay, global-norm clipping and a cosine schedule.

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    /// Fraction of total steps spent in linear warmup.
    pub warmup_frac: f64,
    pub total_steps: usize,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: 1.0,
            warmup_frac: 0.05,
            total_steps: 1000,
        }
    }
}

impl AdamWConfig {
    /// Learning rate at 0-based `step`: linear warmup then cosine decay to 0.
    pub fn lr_at(&self, step: usize) -> f64 {
        let total = self.total_steps.max(1) as f64;
        let warm = (self.warmup_frac * total).ceil().max(1.0);
        let s = step as f64;
        if s < warm {
            self.lr * (s + 1.0) / warm
        } else {
            let progress = ((s - warm) / (total - warm).max(1.0)).min(1.0);
            self.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &ParamStore) -> Self {
        AdamW { config, step: 0, m: params.zeros_like(), v: params.zeros_like() }
    }

    /// Clips `grads` in place to the configured global norm and returns the pre-clip norm.
    pub fn clip(&self, grads: &mut [Tensor]) -> f64 {
        let norm = grads.iter().map(|g| g.sum_sq()).sum::<f64>().sqrt();
        if self.config.clip_norm > 0.0 && norm > self.config.clip_norm {
            let s = self.config.clip_norm / norm;
            for g in grads.iter_mut() {
                g.scale(s);
            }
        }
        norm
    }

    /// One update with the scheduled learning rate. Returns the rate used.
    pub fn update(&mut self, params: &mut ParamStore, grads: &mut [Tensor]) -> f64 {
        let lr = self.config.lr_at(self.step as usize);
        self.clip(grads);
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let decay = if params.decays(id) { c.weight_decay } else { 0.0 };
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let p = params.get_mut(id);
            for i in 0..p.data.len() {
                let g = grads[id.0].data[i];
                m.data[i] = c.beta1 * m.data[i] + (1.0 - c.beta1) * g;
                v.data[i] = c.beta2 * v.data[i] + (1.0 - c.beta2) * g * g;
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                p.data[i] -= lr * (mh / (vh.sqrt() + c.eps) + decay * p.data[i]);
            }
        }
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let c = AdamWConfig { total_steps: 100, ..Default::default() };
        assert!((c.lr_at(4) - 5e-4).abs() < 1e-15);
        assert!(c.lr_at(0) < c.lr_at(3));
        assert!(c.lr_at(50) < c.lr_at(10));
        assert!(c.lr_at(99) < 1e-6);
    }

    #[test]
    fn zero_lr_keeps_params() {
        let mut p = ParamStore::new();
        p.add("w", Tensor::filled(2, 2, 1.5), true);
        let before = p.clone();
        let mut opt = AdamW::new(AdamWConfig { lr: 0.0, ..Default::default() }, &p);
        let mut g = vec![Tensor::filled(2, 2, 3.0)];
        opt.update(&mut p, &mut g);
        assert_eq!(p, before);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = ParamStore::new();
        let id = p.add("w", Tensor::filled(1, 3, 5.0), false);
        let cfg = AdamWConfig { lr: 0.1, total_steps: 500, ..Default::default() };
        let mut opt = AdamW::new(cfg, &p);
        for _ in 0..500 {
            let mut g = vec![Tensor::from_vec(1, 3, p.get(id).data.iter().map(|x| 2.0 * x).collect())];
            opt.update(&mut p, &mut g);
        }
        assert!(p.get(id).data.iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn clipping() {
        let p = ParamStore::new();
        let opt = AdamW::new(AdamWConfig::default(), &p);
        let mut g = vec![Tensor::from_vec(1, 2, vec![3.0, 4.0])];
        assert_eq!(opt.clip(&mut g), 5.0);
        assert!((g[0].data[0] - 0.6).abs() < 1e-15);
    }
}
