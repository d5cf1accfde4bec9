use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

/// Adam with bias correction. Moments are kept per parameter tensor.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(params: &ParamStore, cfg: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().map(|t| vec![0.0; t.len()]).collect();
        Self {
            cfg,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update. A learning rate of exactly zero leaves `params` untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        let mut scale = 1.0;
        if let Some(clip) = self.cfg.clip_norm {
            let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(Error::NonFinite("gradient norm".into()));
            }
            if norm > clip {
                scale = clip / norm;
            }
        }
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = params.tensor_mut(i).data_mut();
            if p.len() != g.len() {
                return Err(Error::Shape(format!("gradient {i} length mismatch")));
            }
            for j in 0..g.len() {
                let gj = g[j] * scale;
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                if lr != 0.0 {
                    let mhat = m[j] / bc1;
                    let vhat = v[j] / bc2;
                    p[j] -= lr * mhat / (vhat.sqrt() + self.cfg.eps);
                }
            }
        }
        Ok(())
    }
}

/// Linear warmup then cosine decay from `base` to `base * min_ratio` at `total` steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub base: f64,
    pub warmup: usize,
    pub total: usize,
    pub min_ratio: f64,
}

impl CosineSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup {
            return self.base * (step + 1) as f64 / self.warmup as f64;
        }
        let span = self.total.saturating_sub(self.warmup).max(1);
        let progress = ((step - self.warmup) as f64 / span as f64).min(1.0);
        let floor = self.base * self.min_ratio;
        floor + 0.5 * (self.base - floor) * (1.0 + (PI * progress).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::new(vec![3], vec![1.5, -0.0, -2.25]).unwrap())
            .unwrap();
        s
    }

    #[test]
    fn zero_learning_rate_is_bit_identical() {
        let mut p = store();
        let before = p.clone();
        let mut adam = Adam::new(&p, AdamConfig::default());
        for _ in 0..3 {
            adam.step(&mut p, &[vec![0.3, -1.0, 7.0]], 0.0).unwrap();
        }
        let bits = |s: &ParamStore| -> Vec<u64> {
            s.tensors()
                .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
                .collect()
        };
        assert_eq!(bits(&p), bits(&before));
    }

    #[test]
    fn first_adam_step_moves_by_lr_times_sign() {
        let mut p = store();
        let mut adam = Adam::new(
            &p,
            AdamConfig {
                clip_norm: None,
                ..Default::default()
            },
        );
        adam.step(&mut p, &[vec![2.0, -3.0, 0.5]], 0.1).unwrap();
        let d = p.tensor(0).data();
        assert!((d[0] - 1.4).abs() < 1e-6);
        assert!((d[1] - 0.1).abs() < 1e-6);
        assert!((d[2] + 2.35).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = store();
        let mut adam = Adam::new(&p, AdamConfig::default());
        for _ in 0..2000 {
            let g: Vec<f64> = p.tensor(0).data().iter().map(|x| 2.0 * (x - 0.5)).collect();
            adam.step(&mut p, &[g], 0.01).unwrap();
        }
        for x in p.tensor(0).data() {
            assert!((x - 0.5).abs() < 1e-3);
        }
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let s = CosineSchedule {
            base: 3e-4,
            warmup: 0,
            total: 100,
            min_ratio: 0.1,
        };
        assert!((s.lr(0) - 3e-4).abs() < 1e-18);
        assert!((s.lr(50) - (3e-5 + 0.5 * 2.7e-4)).abs() < 1e-12);
        assert!((s.lr(100) - 3e-5).abs() < 1e-15);
        assert!((s.lr(1000) - 3e-5).abs() < 1e-15);
        let w = CosineSchedule { warmup: 10, ..s };
        assert!((w.lr(0) - 3e-5).abs() < 1e-15);
        assert!((w.lr(9) - 3e-4).abs() < 1e-15);
    }
}
